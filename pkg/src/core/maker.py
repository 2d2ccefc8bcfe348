"""
代表的マーケットメイカー

静的な無差別価格 X(q)、リスク中立測度 Q_0 の下での期待値、
需要過程 Q に対する利得過程 V(Q) のシミュレーションと
架空市場の富過程との対応の検証を提供する。
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
import math
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from src.core.errors import (
    NumericOverflowError,
    PathFailureError,
)
from src.core.payoff import (
    Constant,
    Estimate,
    ExpectationEngine,
    PayoffExpr,
    StepFunction,
    TimeGrid,
    evaluate_on_paths,
    linear_combination,
    sample_paths,
)
from src.core.payoff.expressions import as_expr, constant_value
from src.utils.logger import logger
from config.settings import DEFAULT_SEED, FLAGGED_PATH_LIMIT, INTEGRABILITY_P, MC_PATHS


@dataclass(frozen=True, eq=False)
class MakerSpec:
    """マーケットメイカー（リスク回避度 γ、保有 Σ_0、取引資産 Ψ）"""
    gamma: float
    assets: Tuple[PayoffExpr, ...]
    endowment: PayoffExpr = field(default_factory=lambda: Constant(0.0))

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"Maker risk aversion must be positive, got {self.gamma}")
        assets = tuple(as_expr(a) for a in self.assets)
        if not assets:
            raise ValueError("Maker needs at least one traded asset")
        object.__setattr__(self, 'assets', assets)
        object.__setattr__(self, 'endowment', as_expr(self.endowment))

    @property
    def k(self) -> int:
        return len(self.assets)

    def portfolio(self, q: Sequence[float]) -> PayoffExpr:
        """q'Ψ"""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if q.shape != (self.k,):
            raise ValueError(f"Position must have {self.k} components, got {q.shape}")
        return linear_combination(self.assets, q)


@dataclass(frozen=True, eq=False)
class InvestorSpec:
    """投資家（リスク回避度 α、保有 Σ_1）"""
    alpha: float
    endowment: PayoffExpr = field(default_factory=lambda: Constant(0.0))

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"Investor risk aversion must be positive, got {self.alpha}")
        object.__setattr__(self, 'endowment', as_expr(self.endowment))


class HProvider(ABC):
    """
    H_t(q) を与えるモデル

    状態はブラウン運動の現在値 B_t。すべてパス方向にベクトル化されている。
    """
    dim: int
    k: int

    @abstractmethod
    def H(self, t: float, state: np.ndarray, q: np.ndarray) -> np.ndarray:
        """
        Args:
            t: 時刻（t < T）
            state: B_t, shape (N, dim)
            q: 累積需要, shape (N, k)

        Returns:
            H_t(q), shape (N, dim)
        """
        pass

    def H0(self, t: float, state: np.ndarray) -> np.ndarray:
        return self.H(t, state, np.zeros((state.shape[0], self.k)))


class DemandRule(ABC):
    """時刻 t_j までのパスから需要 Q_{t_j} を決める規則"""
    k: int

    @abstractmethod
    def __call__(self, t: float, state: np.ndarray) -> np.ndarray:
        """shape (N, k) の需要を返す"""
        pass


@dataclass(frozen=True)
class ConstantDemand(DemandRule):
    """Q ≡ q"""
    q: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, 'q', tuple(np.atleast_1d(np.asarray(self.q, dtype=float))))

    @property
    def k(self) -> int:
        return len(self.q)

    def __call__(self, t: float, state: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.q), (state.shape[0], self.k))


@dataclass(frozen=True)
class ScheduleDemand(DemandRule):
    """確定的なスケジュール Q_t（k 次元ステップ関数）"""
    schedule: StepFunction

    @property
    def k(self) -> int:
        return self.schedule.dim

    def __call__(self, t: float, state: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.schedule.at(t), (state.shape[0], self.k))


@dataclass(frozen=True)
class FeedbackDemand(DemandRule):
    """状態フィードバック Q_t = func(t, B_t)"""
    func: Callable[[float, np.ndarray], np.ndarray]
    k: int = 1

    def __call__(self, t: float, state: np.ndarray) -> np.ndarray:
        q = np.asarray(self.func(t, state), dtype=float)
        return q.reshape(state.shape[0], self.k)


def check_maker_integrability(
    maker: MakerSpec, engine: ExpectationEngine, p: float = INTEGRABILITY_P
) -> float:
    """E[e^{-γΣ_0 + p|Ψ|}] が標本上で有限であることを確認し、その対数を返す"""
    samples = engine.prepare([maker.endowment, *maker.assets])
    return samples.check_exp_moment(
        -maker.gamma * maker.endowment, maker.assets, p, "maker exponential moment"
    )


def static_quote(maker: MakerSpec, engine: ExpectationEngine, q: Sequence[float]) -> float:
    """
    q 単位の資産を売る際のメイカーの無差別価格

    X(q) = (1/γ)[log E e^{-γΣ_0 - γq'Ψ} - log E e^{-γΣ_0}]
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if not np.all(np.isfinite(q)):
        raise ValueError(f"Position must be finite, got {q}")
    if not np.any(q):
        return 0.0
    check_maker_integrability(maker, engine)
    gamma = maker.gamma
    position = maker.portfolio(q)
    base = -gamma * maker.endowment
    try:
        samples = engine.prepare([maker.endowment, position])
        shifted = samples.log_mean_exp(base - gamma * position).value
        reference = samples.log_mean_exp(base).value
    except NumericOverflowError as e:
        logger.error(f"Static quote overflowed at q={q.tolist()}, gamma={gamma}")
        raise NumericOverflowError(
            f"Quote is not finite at q={q.tolist()}", "reduce |q| or the maker risk aversion"
        ) from e
    return (shifted - reference) / gamma


def q0_estimate(maker: MakerSpec, engine: ExpectationEngine, expr: PayoffExpr) -> Estimate:
    """E_0[expr] と標準誤差"""
    expr = as_expr(expr)
    tilt = -maker.gamma * maker.endowment
    if constant_value(maker.endowment) is not None:
        return engine.prepare([expr]).mean(expr)
    const = constant_value(expr)
    if const is not None:
        return Estimate(const)
    return engine.prepare([expr, tilt]).tilted_mean(expr, tilt)


def q0_expect(maker: MakerSpec, engine: ExpectationEngine, expr: PayoffExpr) -> float:
    """E_0[X] = E[X e^{-γΣ_0}] / E[e^{-γΣ_0}]"""
    return q0_estimate(maker, engine, expr).value


@dataclass
class GainsSimulation:
    """利得過程のシミュレーション結果"""
    grid: TimeGrid
    gamma: float
    values: np.ndarray      # V_{t_j}, shape (N, n_steps + 1)
    flagged: np.ndarray     # H が非有限になったパス, shape (N,)
    increments: np.ndarray  # ΔB, shape (N, n_steps, d)
    pi: np.ndarray          # H(Q) - H(0), shape (N, n_steps, d)
    h0: np.ndarray          # H(0), shape (N, n_steps, d)

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]

    @property
    def valid(self) -> np.ndarray:
        return ~self.flagged


def simulate_gains(
    maker: MakerSpec,
    h_provider: HProvider,
    grid: TimeGrid,
    demand: DemandRule,
    paths: int = MC_PATHS,
    seed: int = DEFAULT_SEED,
    increments: Optional[np.ndarray] = None
) -> GainsSimulation:
    """
    V_t(Q) を Euler 法（H は区間の左端で評価）でシミュレーションする

    V_t = (1/γ)∫(H_s(Q_s)-H_s(0))'(dB_s - H_s(0)ds) - (1/2γ)∫|H_s(Q_s)-H_s(0)|²ds

    Raises:
        PathFailureError: 非有限な H を持つパスが FLAGGED_PATH_LIMIT を超えた場合
    """
    if demand.k != maker.k or h_provider.k != maker.k:
        raise ValueError(
            f"Demand ({demand.k}) and model ({h_provider.k}) must match the {maker.k} traded assets"
        )
    if increments is None:
        increments = sample_paths(grid, h_provider.dim, paths, seed)
    increments = np.asarray(increments, dtype=float)
    n_paths, n_steps, dim = increments.shape
    if n_steps != grid.n_steps or dim != h_provider.dim:
        raise ValueError(
            f"Increments shape {increments.shape} does not match grid/model "
            f"({grid.n_steps} steps, dimension {h_provider.dim})"
        )

    gamma = maker.gamma
    dt = grid.dt
    values = np.zeros((n_paths, n_steps + 1))
    pi = np.zeros((n_paths, n_steps, dim))
    h0 = np.zeros((n_paths, n_steps, dim))
    flagged = np.zeros(n_paths, dtype=bool)
    state = np.zeros((n_paths, dim))

    logger.info(f"Simulating gains on {n_paths} paths, {n_steps} steps")
    for j in range(n_steps):
        t = float(grid.nodes[j])
        q = demand(t, state)
        with np.errstate(all='ignore'):
            h_q = h_provider.H(t, state, q)
            h_zero = h_provider.H0(t, state)
            step_pi = h_q - h_zero
        bad = ~(np.all(np.isfinite(step_pi), axis=1) & np.all(np.isfinite(h_zero), axis=1))
        flagged |= bad
        step_pi = np.where(flagged[:, None], 0.0, step_pi)
        h_zero = np.where(flagged[:, None], 0.0, h_zero)
        db = increments[:, j, :]
        drift = np.sum(step_pi * (db - h_zero * dt[j]), axis=1) / gamma
        penalty = np.sum(step_pi ** 2, axis=1) * dt[j] / (2.0 * gamma)
        values[:, j + 1] = values[:, j] + drift - penalty
        pi[:, j, :] = step_pi
        h0[:, j, :] = h_zero
        state = state + db

    n_flagged = int(flagged.sum())
    if n_flagged:
        share = n_flagged / n_paths
        if share > FLAGGED_PATH_LIMIT:
            logger.error(f"{n_flagged} of {n_paths} paths have non-finite H")
            raise PathFailureError(
                f"{share:.2%} of paths have non-finite H (limit {FLAGGED_PATH_LIMIT:.2%})"
            )
        logger.warning(f"Excluding {n_flagged} flagged paths with non-finite H")

    return GainsSimulation(grid, gamma, values, flagged, increments, pi, h0)


def log_fictitious_wealth(simulation: GainsSimulation) -> np.ndarray:
    """
    架空市場の富 X(π)（X_0 = 1）の対数を Milstein 法で計算する

    dX = X π'(λdt + dB), λ = -H(0)
    """
    pi, h0, db = simulation.pi, simulation.h0, simulation.increments
    dt = simulation.grid.dt[None, :]
    exposure = np.sum(pi * db, axis=2)
    growth = (
        1.0
        - np.sum(pi * h0, axis=2) * dt
        + exposure
        + 0.5 * (exposure ** 2 - np.sum(pi ** 2, axis=2) * dt)
    )
    if np.any(growth[simulation.valid] <= 0):
        raise NumericOverflowError(
            "Fictitious wealth became non-positive", "refine the time grid"
        )
    growth = np.where(simulation.valid[:, None], growth, 1.0)
    log_x = np.zeros(simulation.values.shape)
    log_x[:, 1:] = np.cumsum(np.log(growth), axis=1)
    return log_x


def wealth_identity_check(
    maker: MakerSpec,
    h_provider: HProvider,
    grid: TimeGrid,
    demand: DemandRule,
    paths: int = 1000,
    seed: int = DEFAULT_SEED,
    increments: Optional[np.ndarray] = None
) -> float:
    """共通の増分上で max |V_t(Q) - (1/γ) log X_t(π)| を返す"""
    simulation = simulate_gains(maker, h_provider, grid, demand, paths, seed, increments)
    if not np.any(simulation.pi):
        return 0.0
    log_x = log_fictitious_wealth(simulation)
    gap = np.abs(simulation.values - log_x / maker.gamma)[simulation.valid]
    return float(gap.max()) if gap.size else 0.0


@dataclass(frozen=True)
class IdentityConvergence:
    """格子細分に対する富の対応の誤差"""
    n_steps: int
    coarse: float
    fine: float

    @property
    def ratio(self) -> float:
        if self.coarse == 0.0:
            return 0.0
        return self.fine / self.coarse


def wealth_identity_convergence(
    maker: MakerSpec,
    h_provider: HProvider,
    horizon: float,
    demand: DemandRule,
    n_steps: int = 256,
    paths: int = 1000,
    seed: int = DEFAULT_SEED
) -> IdentityConvergence:
    """n_steps と 2·n_steps で誤差を比較（粗い格子の増分は細かい増分の和）"""
    fine_grid = TimeGrid.uniform(horizon, 2 * n_steps)
    fine_inc = sample_paths(fine_grid, h_provider.dim, paths, seed)
    coarse_inc = fine_inc[:, 0::2, :] + fine_inc[:, 1::2, :]
    coarse = wealth_identity_check(
        maker, h_provider, fine_grid.coarsen(2), demand, paths, seed, coarse_inc
    )
    fine = wealth_identity_check(maker, h_provider, fine_grid, demand, paths, seed, fine_inc)
    logger.info(f"Wealth identity discrepancy {coarse:.3e} -> {fine:.3e} on refinement")
    return IdentityConvergence(n_steps, coarse, fine)


@dataclass(frozen=True)
class BudgetCheck:
    """E_0[e^{γV_T(Q)}] の推定"""
    mean: float
    stderr: float
    dt_bias: float
    paths: int

    def holds(self, width: float = 5.0) -> bool:
        return self.mean <= 1.0 + width * (self.stderr + self.dt_bias)


def _q0_exp_gains(maker: MakerSpec, simulation: GainsSimulation) -> Tuple[float, float]:
    valid = simulation.valid
    log_tilt = np.zeros(valid.sum())
    if constant_value(maker.endowment) is None:
        sigma0 = evaluate_on_paths(maker.endowment, simulation.grid, simulation.increments[valid])
        log_tilt = -maker.gamma * sigma0
    log_y = maker.gamma * simulation.terminal[valid]
    weights = np.exp(log_tilt - logsumexp(log_tilt))
    mean = float(np.exp(logsumexp(log_tilt + log_y) - logsumexp(log_tilt)))
    if not math.isfinite(mean):
        raise NumericOverflowError("E_0[exp(gamma V_T)] is not finite")
    stderr = math.sqrt(float(np.sum(weights ** 2 * (np.exp(log_y) - mean) ** 2)))
    return mean, stderr


def budget_constraint_check(
    maker: MakerSpec,
    h_provider: HProvider,
    grid: TimeGrid,
    demand: DemandRule,
    paths: int = MC_PATHS,
    seed: int = DEFAULT_SEED
) -> BudgetCheck:
    """
    予算制約 E_0[e^{γV_T(Q)}] <= 1 の標本推定

    Δt バイアスは 2 区間ずつまとめた粗い格子（同じ増分）との差で見積もる。
    """
    simulation = simulate_gains(maker, h_provider, grid, demand, paths, seed)
    mean, stderr = _q0_exp_gains(maker, simulation)
    dt_bias = 0.0
    if grid.n_steps % 2 == 0 and grid.n_steps >= 2:
        inc = simulation.increments
        coarse = simulate_gains(
            maker, h_provider, grid.coarsen(2), demand, paths, seed,
            inc[:, 0::2, :] + inc[:, 1::2, :]
        )
        coarse_mean, _ = _q0_exp_gains(maker, coarse)
        dt_bias = abs(mean - coarse_mean)
    else:
        logger.warning(f"Grid with {grid.n_steps} steps cannot be halved; dt bias not estimated")
    logger.info(f"Budget check: E0[exp(gamma V_T)] = {mean:.6f} +/- {stderr:.2e}, bias {dt_bias:.2e}")
    return BudgetCheck(mean, stderr, dt_bias, int(simulation.valid.sum()))


DemandLike = Union[DemandRule, Sequence[float], StepFunction]


def as_demand(value: DemandLike) -> DemandRule:
    """定数ベクトルやステップ関数を需要規則に変換"""
    if isinstance(value, DemandRule):
        return value
    if isinstance(value, StepFunction):
        return ScheduleDemand(value)
    return ConstantDemand(tuple(np.atleast_1d(value)))
