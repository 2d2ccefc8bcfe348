"""
期待値エンジン

線形ガウス葉の汎関数 ∫ c' dB は共分散を厳密に計算したうえで固有値分解し、
低ランクの標準ガウス因子 ξ ~ N(0, I_r) の一次変換として表す。
求積法は因子上のテンソル型 Gauss–Hermite 則、モンテカルロ法は因子を
（パス依存の葉がある場合はブラウン増分を）ブロック単位のストリームで生成する。
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
import itertools
import math
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import logsumexp

from src.core.errors import NumericOverflowError, UnsupportedExpressionError
from src.core.payoff.expressions import (
    GaussianLeaf,
    PathFunctional,
    PayoffExpr,
    as_expr,
    constant_value,
    unique_leaves,
)
from src.core.payoff.grid import StepFunction, TimeGrid
from src.utils.logger import logger
from config.settings import (
    QUADRATURE_NODES,
    QUADRATURE_MAX_DIM,
    MC_PATHS,
    MC_BLOCK_SIZE,
    DEFAULT_SEED,
    ABS_TOL,
    RANK_TOL,
    THREADS,
    INTEGRABILITY_MAX_SHARE,
)

QUADRATURE = 'quadrature'
MONTE_CARLO = 'mc'

_OVERFLOW_HINT = (
    "evaluate exponential moments with log_expect_exp, "
    "or reduce the position size / risk aversion"
)
_INTEGRABILITY_HINT = (
    "the claim or an endowment appears to lack finite exponential moments; "
    "lower IMPACT_PRICER_INTEGRABILITY_P only if its tails are known to be light"
)


@dataclass(frozen=True)
class Estimate:
    """期待値の推定値と標準誤差（求積法では 0）"""
    value: float
    stderr: float = 0.0

    def __float__(self) -> float:
        return self.value


@lru_cache(maxsize=16)
def gauss_hermite_rule(nodes: int, rank: int) -> Tuple[np.ndarray, np.ndarray]:
    """標準正規分布に対する rank 次元テンソル型 Gauss–Hermite 則"""
    x, w = hermgauss(nodes)
    z = math.sqrt(2.0) * x
    w = w / math.sqrt(math.pi)
    if rank == 0:
        return np.zeros((1, 0)), np.ones(1)
    points = np.array(list(itertools.product(z, repeat=rank)))
    weights = np.array([np.prod(c) for c in itertools.product(w, repeat=rank)])
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


def block_generator(seed: int, block: int) -> np.random.Generator:
    """(seed, ブロック番号) で決まるカウンタ型乱数ストリーム"""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,)))
    )


def _block_sizes(paths: int, block_size: int) -> List[int]:
    full, rest = divmod(paths, block_size)
    return [block_size] * full + ([rest] if rest else [])


@dataclass(frozen=True)
class GaussianFactor:
    """汎関数群 (∫ c_i' dB)_i = L ξ の因子表現"""
    functionals: Tuple[StepFunction, ...]
    loadings: np.ndarray  # shape (m, r)
    dim: int

    @property
    def rank(self) -> int:
        return self.loadings.shape[1]

    @classmethod
    def from_functionals(cls, functionals: Sequence[StepFunction]) -> 'GaussianFactor':
        functionals = tuple(functionals)
        dims = {c.dim for c in functionals}
        if len(dims) > 1:
            raise UnsupportedExpressionError(
                f"Leaves reference Brownian motions of different dimension: {sorted(dims)}"
            )
        dim = dims.pop() if dims else 0
        m = len(functionals)
        if m == 0:
            return cls(functionals, np.zeros((0, 0)), dim)
        cov = np.empty((m, m))
        for i in range(m):
            for j in range(i, m):
                cov[i, j] = cov[j, i] = functionals[i].inner(functionals[j])
        eigval, eigvec = np.linalg.eigh(cov)
        top = float(eigval.max()) if eigval.size else 0.0
        if top > 0:
            keep = eigval > RANK_TOL * top
        else:
            keep = np.zeros(m, dtype=bool)
        loadings = eigvec[:, keep] * np.sqrt(eigval[keep])
        logger.debug(f"Gaussian factor: {m} functionals, rank {int(keep.sum())}")
        return cls(functionals, loadings, dim)


def _functional_values_from_increments(
    functionals: Sequence[StepFunction],
    grid: TimeGrid,
    increments: np.ndarray
) -> np.ndarray:
    """増分 ΔB (N, n, d) から汎関数値 (N, m) を計算"""
    columns = []
    for c in functionals:
        if not grid.contains_nodes(c.grid):
            raise UnsupportedExpressionError(
                f"Integrand grid {c.grid!r} is not contained in path grid {grid!r}"
            )
        refined = c.refine(grid).values
        columns.append(np.einsum('pnd,nd->p', increments, refined))
    if not columns:
        return np.zeros((increments.shape[0], 0))
    return np.stack(columns, axis=1)


def _path_values(leaf: PathFunctional, grid: TimeGrid, increments: np.ndarray) -> np.ndarray:
    """増分を累積し leaf のグリッド上のパス (N, n_leaf+1, d) を得る"""
    if not grid.contains_nodes(leaf.grid):
        raise UnsupportedExpressionError(
            f"Path functional grid {leaf.grid!r} is not contained in path grid {grid!r}"
        )
    if increments.shape[2] != leaf.dim:
        raise UnsupportedExpressionError(
            f"Path functional expects dimension {leaf.dim}, got {increments.shape[2]}"
        )
    path = np.concatenate(
        (np.zeros((increments.shape[0], 1, increments.shape[2])), np.cumsum(increments, axis=1)),
        axis=1
    )
    idx = np.clip(np.searchsorted(grid.nodes, leaf.grid.nodes - 1e-12 * grid.horizon), 0, grid.n_steps)
    return path[:, idx, :]


def _leaf_samples_from_functionals(
    leaves: Sequence[GaussianLeaf],
    values: np.ndarray
) -> Dict[int, np.ndarray]:
    samples = {}
    offset = 0
    for leaf in leaves:
        width = len(leaf.functionals())
        samples[id(leaf)] = values[:, offset:offset + width]
        offset += width
    return samples


@dataclass
class SampleSet:
    """
    期待値計算用に準備された標本（求積ノードまたはモンテカルロ標本）

    同じ式群に対して複数の期待値を評価する場合（求根など）に使い回す。
    """
    samples: Dict[int, np.ndarray]
    weights: np.ndarray
    method: str
    exprs: Tuple[PayoffExpr, ...] = field(default_factory=tuple)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def is_monte_carlo(self) -> bool:
        return self.method == MONTE_CARLO

    def values(self, expr: PayoffExpr) -> np.ndarray:
        """標本上の式の値（非有限値はオーバーフローエラー）"""
        expr = as_expr(expr)
        with np.errstate(over='ignore', invalid='ignore'):
            x = expr.evaluate(self.samples, self.size)
        if not np.all(np.isfinite(x)):
            bad = int(np.sum(~np.isfinite(x)))
            logger.error(f"Non-finite evaluation at {bad} of {self.size} {self.method} samples")
            raise NumericOverflowError(
                f"Expression is non-finite at {bad} samples", _OVERFLOW_HINT
            )
        return x

    def mean(self, expr: PayoffExpr) -> Estimate:
        const = constant_value(as_expr(expr))
        if const is not None:
            return Estimate(const)
        x = self.values(expr)
        value = float(np.dot(self.weights, x))
        if not math.isfinite(value):
            raise NumericOverflowError("Expectation overflowed", _OVERFLOW_HINT)
        if not self.is_monte_carlo:
            return Estimate(value)
        if self.size < 2:
            return Estimate(value)
        return Estimate(value, float(np.std(x, ddof=1) / math.sqrt(self.size)))

    def log_mean_exp(self, expr: PayoffExpr) -> Estimate:
        """log E[e^{expr}]（シフト付き log-sum-exp）"""
        const = constant_value(as_expr(expr))
        if const is not None:
            return Estimate(const)
        x = self.values(expr)
        value = float(logsumexp(x, b=self.weights))
        if not math.isfinite(value):
            raise NumericOverflowError("log E[exp] is not finite", _OVERFLOW_HINT)
        if not self.is_monte_carlo or self.size < 2:
            return Estimate(value)
        # デルタ法: Var(log m̂) ≈ Var(e^{x-max}) / (N m̂²)
        shifted = np.exp(x - x.max())
        rel = np.std(shifted, ddof=1) / (math.sqrt(self.size) * shifted.mean())
        return Estimate(value, float(rel))

    def tilted_mean(self, numerator: PayoffExpr, tilt: PayoffExpr) -> Estimate:
        """E[X e^W] / E[e^W]"""
        numerator = as_expr(numerator)
        tilt = as_expr(tilt)
        if constant_value(tilt) is not None:
            return self.mean(numerator)
        const = constant_value(numerator)
        if const is not None:
            return Estimate(const)
        w = self.values(tilt)
        x = self.values(numerator)
        with np.errstate(divide='ignore'):
            log_w = np.log(self.weights) + w
        gibbs = np.exp(log_w - logsumexp(log_w))
        value = float(np.dot(gibbs, x))
        if not math.isfinite(value):
            raise NumericOverflowError("Tilted expectation is not finite", _OVERFLOW_HINT)
        if not self.is_monte_carlo:
            return Estimate(value)
        stderr = math.sqrt(float(np.sum(gibbs ** 2 * (x - value) ** 2)))
        return Estimate(value, stderr)

    def _max_share(self, x: np.ndarray) -> float:
        with np.errstate(divide='ignore'):
            log_terms = np.log(self.weights) + x
        return float(np.exp(log_terms.max() - logsumexp(log_terms)))

    def check_exp_moment(
        self,
        base: PayoffExpr,
        magnitudes: Sequence[PayoffExpr],
        p: float,
        label: str = "exponential moment"
    ) -> float:
        """
        log E[e^{base + p Σ|m_i|}] を評価し、指数モーメントの有限性を経験的に確認する

        値が非有限になる場合に加えて、|m_i| の項によって単一の標本
        （求積ノードまたはパス）に INTEGRABILITY_MAX_SHARE を超える重みが
        集中する場合もエラーとする。base だけで既に集中している場合は
        p の項の寄与を判定できないため、デバッグログのみ残す。

        Args:
            base: 指数の基準部分（例: -γΣ_0）
            magnitudes: 絶対値を p 倍して加える確率変数
            p: 指数モーメントの次数
            label: エラーメッセージに使う名前

        Returns:
            log E[e^{base + p Σ|m_i|}]

        Raises:
            NumericOverflowError: 非有限、または単一の標本に支配される場合
        """
        x_base = np.broadcast_to(self.values(base), (self.size,))
        bump = np.zeros(self.size)
        for m in magnitudes:
            bump = bump + np.abs(self.values(m))
        with np.errstate(over='ignore', invalid='ignore'):
            x = x_base + p * bump
            value = float(logsumexp(x, b=self.weights)) if np.all(np.isfinite(x)) else math.inf
        if not math.isfinite(value):
            logger.error(f"{label} is not finite at p={p} on {self.size} {self.method} samples")
            raise NumericOverflowError(f"{label} is not finite at p={p}", _INTEGRABILITY_HINT)
        if self.size < 2:
            return value

        share = self._max_share(x)
        if share <= INTEGRABILITY_MAX_SHARE:
            return value
        base_share = self._max_share(x_base)
        if base_share > INTEGRABILITY_MAX_SHARE:
            logger.debug(
                f"{label}: base exponent already concentrated (share {base_share:.3f}), "
                f"skipping dominance check"
            )
            return value
        unit = 'path' if self.is_monte_carlo else 'node'
        logger.error(f"{label} at p={p}: a single {unit} carries {share:.3f} of the mass")
        raise NumericOverflowError(
            f"{label} is dominated by a single {unit} (share {share:.3f}) at p={p}",
            _INTEGRABILITY_HINT
        )

    def support_range(self, expr: PayoffExpr) -> Tuple[float, float]:
        """標本の台における最小値・最大値"""
        x = self.values(expr)
        mask = self.weights > 0
        return float(x[mask].min()), float(x[mask].max())


@dataclass(frozen=True)
class ExpectationEngine:
    """求積法またはモンテカルロ法による期待値評価器（不変）"""
    method: str = QUADRATURE
    nodes: int = QUADRATURE_NODES
    paths: int = MC_PATHS
    seed: int = DEFAULT_SEED
    abs_tol: float = ABS_TOL
    max_dim: int = QUADRATURE_MAX_DIM
    block_size: int = MC_BLOCK_SIZE
    threads: int = THREADS

    def __post_init__(self):
        if self.method not in (QUADRATURE, MONTE_CARLO):
            raise ValueError(f"Unknown expectation method: {self.method}")
        if self.nodes < 1 or self.paths < 1 or self.block_size < 1:
            raise ValueError("nodes, paths and block_size must be positive")
        if self.abs_tol <= 0:
            raise ValueError(f"abs_tol must be positive, got {self.abs_tol}")

    @classmethod
    def quadrature(cls, nodes: int = QUADRATURE_NODES, **kwargs) -> 'ExpectationEngine':
        return cls(method=QUADRATURE, nodes=nodes, **kwargs)

    @classmethod
    def monte_carlo(
        cls,
        paths: int = MC_PATHS,
        seed: int = DEFAULT_SEED,
        **kwargs
    ) -> 'ExpectationEngine':
        return cls(method=MONTE_CARLO, paths=paths, seed=seed, **kwargs)

    @property
    def is_monte_carlo(self) -> bool:
        return self.method == MONTE_CARLO

    def prepare(self, exprs: Sequence[PayoffExpr]) -> SampleSet:
        """式群に共通の標本を準備"""
        exprs = tuple(as_expr(e) for e in exprs)
        leaves = unique_leaves(exprs)
        path_leaves = [leaf for leaf in leaves if isinstance(leaf, PathFunctional)]
        gaussian = [leaf for leaf in leaves if isinstance(leaf, GaussianLeaf)]

        if path_leaves:
            if not self.is_monte_carlo:
                raise UnsupportedExpressionError(
                    "Quadrature applies to terminal-state expressions only; "
                    "use the Monte-Carlo engine for path functionals"
                )
            return self._prepare_paths(exprs, gaussian, path_leaves)

        functionals = [c for leaf in gaussian for c in leaf.functionals()]
        factor = GaussianFactor.from_functionals(functionals)
        if self.is_monte_carlo:
            xi = self.sample_blocks(lambda rng, n: rng.standard_normal((n, factor.rank)))
            weights = np.full(xi.shape[0], 1.0 / xi.shape[0])
        else:
            if factor.rank > self.max_dim:
                raise UnsupportedExpressionError(
                    f"Gaussian factor rank {factor.rank} exceeds the quadrature limit "
                    f"{self.max_dim}; use the Monte-Carlo engine"
                )
            xi, weights = gauss_hermite_rule(self.nodes, factor.rank)
        values = xi @ factor.loadings.T if factor.rank else np.zeros((xi.shape[0], len(functionals)))
        samples = _leaf_samples_from_functionals(gaussian, values)
        return SampleSet(samples, weights, self.method, exprs)

    def _prepare_paths(
        self,
        exprs: Tuple[PayoffExpr, ...],
        gaussian: List[GaussianLeaf],
        path_leaves: List[PathFunctional]
    ) -> SampleSet:
        grid = path_leaves[0].grid
        for leaf in path_leaves[1:]:
            grid = grid.union(leaf.grid)
        for leaf in gaussian:
            for c in leaf.functionals():
                grid = grid.union(c.grid)
        dim = max(leaf.dim for leaf in path_leaves)
        logger.debug(f"Sampling Brownian paths on {grid!r} in dimension {dim}")

        def block(rng: np.random.Generator, n: int) -> Dict[int, np.ndarray]:
            increments = rng.standard_normal((n, grid.n_steps, dim)) * np.sqrt(grid.dt)[None, :, None]
            return evaluate_leaves(gaussian + path_leaves, grid, increments)

        parts = self.map_blocks(block)
        samples = {
            key: np.concatenate([part[key] for part in parts], axis=0)
            for key in parts[0]
        }
        n = sum(part[next(iter(part))].shape[0] for part in parts)
        return SampleSet(samples, np.full(n, 1.0 / n), self.method, exprs)

    def map_blocks(self, func: Callable[[np.random.Generator, int], object]) -> list:
        """ブロックごとに func(rng, n) を実行し、ブロック順に結果を返す"""
        sizes = _block_sizes(self.paths, self.block_size)
        jobs = [(b, n) for b, n in enumerate(sizes)]

        def run(job):
            b, n = job
            return func(block_generator(self.seed, b), n)

        if self.threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=min(self.threads, len(jobs))) as pool:
                return list(pool.map(run, jobs))
        return [run(job) for job in jobs]

    def sample_blocks(self, func: Callable[[np.random.Generator, int], np.ndarray]) -> np.ndarray:
        return np.concatenate(self.map_blocks(func), axis=0)


def evaluate_leaves(
    leaves: Sequence,
    grid: TimeGrid,
    increments: np.ndarray
) -> Dict[int, np.ndarray]:
    """与えられたブラウン増分上で各葉の汎関数値（またはパス）を計算"""
    samples = {}
    for leaf in leaves:
        if isinstance(leaf, PathFunctional):
            samples[id(leaf)] = _path_values(leaf, grid, increments)
        else:
            functionals = leaf.functionals()
            for c in functionals:
                if c.dim != increments.shape[2]:
                    raise UnsupportedExpressionError(
                        f"Leaf dimension {c.dim} does not match path dimension {increments.shape[2]}"
                    )
            samples[id(leaf)] = _functional_values_from_increments(functionals, grid, increments)
    return samples


def evaluate_on_paths(expr: PayoffExpr, grid: TimeGrid, increments: np.ndarray) -> np.ndarray:
    """
    ブラウン増分 (N, n_steps, d) 上で式を評価する

    葉の区切り点はすべて grid の節点に含まれている必要がある。
    """
    expr = as_expr(expr)
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 3 or increments.shape[1] != grid.n_steps:
        raise ValueError(
            f"Increments must have shape (paths, {grid.n_steps}, d), got {increments.shape}"
        )
    samples = evaluate_leaves(unique_leaves([expr]), grid, increments)
    with np.errstate(over='ignore', invalid='ignore'):
        values = expr.evaluate(samples, increments.shape[0])
    if not np.all(np.isfinite(values)):
        raise NumericOverflowError("Expression is non-finite on sampled paths", _OVERFLOW_HINT)
    return values


def sample_paths(
    grid: TimeGrid,
    dim: int,
    paths: int,
    seed: int = DEFAULT_SEED,
    block_size: int = MC_BLOCK_SIZE,
    threads: int = THREADS
) -> np.ndarray:
    """
    ブラウン増分 ΔB を生成する

    Returns:
        shape (paths, n_steps, dim)、各成分の分散は Δt
    """
    if dim < 1 or paths < 1:
        raise ValueError(f"dim and paths must be positive, got {dim}, {paths}")
    engine = ExpectationEngine.monte_carlo(
        paths=paths, seed=seed, block_size=block_size, threads=threads
    )
    scale = np.sqrt(grid.dt)[None, :, None]
    return engine.sample_blocks(
        lambda rng, n: rng.standard_normal((n, grid.n_steps, dim)) * scale
    )


def estimate(engine: ExpectationEngine, expr: PayoffExpr) -> Estimate:
    """E[expr] と標準誤差"""
    expr = as_expr(expr)
    const = constant_value(expr)
    if const is not None:
        return Estimate(const)
    return engine.prepare([expr]).mean(expr)


def expect(engine: ExpectationEngine, expr: PayoffExpr) -> float:
    """E[expr]"""
    return estimate(engine, expr).value


def log_expect_exp(engine: ExpectationEngine, expr: PayoffExpr) -> float:
    """log E[e^{expr}]"""
    expr = as_expr(expr)
    const = constant_value(expr)
    if const is not None:
        return const
    return engine.prepare([expr]).log_mean_exp(expr).value


def tilted_expect(engine: ExpectationEngine, numerator: PayoffExpr, tilt: PayoffExpr) -> float:
    """E[X e^W] / E[e^W]"""
    numerator, tilt = as_expr(numerator), as_expr(tilt)
    if constant_value(tilt) is not None:
        return expect(engine, numerator)
    const = constant_value(numerator)
    if const is not None:
        return const
    return engine.prepare([numerator, tilt]).tilted_mean(numerator, tilt).value


def essential_range(engine: ExpectationEngine, expr: PayoffExpr) -> Tuple[float, float]:
    """
    (ess inf, ess sup) の推定

    構造的に有界な側は標本の台での最小・最大、非有界な側は ±∞ を返す。
    """
    expr = as_expr(expr)
    lo, hi = expr.bounds()
    if math.isinf(lo) and math.isinf(hi):
        return lo, hi
    support_lo, support_hi = engine.prepare([expr]).support_range(expr)
    return (
        lo if math.isinf(lo) else support_lo,
        hi if math.isinf(hi) else support_hi,
    )
