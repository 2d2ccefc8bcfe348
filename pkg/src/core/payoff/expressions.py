"""
確率変数の式木

葉はすべて d 次元ブラウン運動 B の汎関数として表現される。
線形ガウス葉（Z の一次形式、確率積分、終端座標の関数）は
ステップ関数 c による汎関数 ∫ c_t' dB_t を通じて評価され、
パス依存の葉は離散化されたパス全体から評価される。
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
import math
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.payoff.grid import StepFunction, TimeGrid

Number = Union[int, float]
Bounds = Tuple[float, float]

# 葉オブジェクトの id -> 汎関数値 (N, m) の対応
LeafSamples = Dict[int, np.ndarray]


class PayoffExpr(ABC):
    """確率変数の式（不変オブジェクト）"""

    @abstractmethod
    def leaves(self) -> Iterator['Leaf']:
        """式に含まれる葉を列挙"""

    @abstractmethod
    def evaluate(self, samples: LeafSamples, n: int) -> np.ndarray:
        """n 個の標本上で式を評価し shape (n,) の配列を返す"""

    @abstractmethod
    def bounds(self) -> Bounds:
        """区間演算による値域の包含区間"""

    @property
    def is_constant(self) -> bool:
        return next(iter(self.leaves()), None) is None

    @property
    def is_path_dependent(self) -> bool:
        return any(isinstance(leaf, PathFunctional) for leaf in self.leaves())

    def exp(self) -> 'PayoffExpr':
        return Exp(self)

    def __add__(self, other: Union['PayoffExpr', Number]) -> 'PayoffExpr':
        return Sum((self, as_expr(other)))

    __radd__ = __add__

    def __neg__(self) -> 'PayoffExpr':
        return Scaled(-1.0, self)

    def __sub__(self, other: Union['PayoffExpr', Number]) -> 'PayoffExpr':
        return Sum((self, -as_expr(other)))

    def __rsub__(self, other: Number) -> 'PayoffExpr':
        return Sum((as_expr(other), -self))

    def __mul__(self, other: Union['PayoffExpr', Number]) -> 'PayoffExpr':
        if isinstance(other, PayoffExpr):
            return Product((self, other))
        return Scaled(float(other), self)

    __rmul__ = __mul__

    def __truediv__(self, other: Number) -> 'PayoffExpr':
        return Scaled(1.0 / float(other), self)


def as_expr(value: Union[PayoffExpr, Number]) -> PayoffExpr:
    if isinstance(value, PayoffExpr):
        return value
    return Constant(float(value))


def _mul_bounds(a: Bounds, b: Bounds) -> Bounds:
    products = []
    for x in a:
        for y in b:
            products.append(0.0 if x == 0.0 or y == 0.0 else x * y)
    return min(products), max(products)


@dataclass(frozen=True, eq=False)
class Constant(PayoffExpr):
    """定数"""
    value: float

    def leaves(self) -> Iterator['Leaf']:
        return iter(())

    def evaluate(self, samples: LeafSamples, n: int) -> np.ndarray:
        return np.full(n, self.value)

    def bounds(self) -> Bounds:
        return self.value, self.value


@dataclass(frozen=True, eq=False)
class Sum(PayoffExpr):
    terms: Tuple[PayoffExpr, ...]

    def leaves(self) -> Iterator['Leaf']:
        for term in self.terms:
            yield from term.leaves()

    def evaluate(self, samples: LeafSamples, n: int) -> np.ndarray:
        total = np.zeros(n)
        for term in self.terms:
            total = total + term.evaluate(samples, n)
        return total

    def bounds(self) -> Bounds:
        lo = sum(term.bounds()[0] for term in self.terms)
        hi = sum(term.bounds()[1] for term in self.terms)
        return lo, hi


@dataclass(frozen=True, eq=False)
class Scaled(PayoffExpr):
    factor: float
    expr: PayoffExpr

    def leaves(self) -> Iterator['Leaf']:
        return self.expr.leaves()

    def evaluate(self, samples: LeafSamples, n: int) -> np.ndarray:
        return self.factor * self.expr.evaluate(samples, n)

    def bounds(self) -> Bounds:
        return _mul_bounds((self.factor, self.factor), self.expr.bounds())


@dataclass(frozen=True, eq=False)
class Product(PayoffExpr):
    factors: Tuple[PayoffExpr, ...]

    def leaves(self) -> Iterator['Leaf']:
        for factor in self.factors:
            yield from factor.leaves()

    def evaluate(self, samples: LeafSamples, n: int) -> np.ndarray:
        result = np.ones(n)
        for factor in self.factors:
            result = result * factor.evaluate(samples, n)
        return result

    def bounds(self) -> Bounds:
        result = (1.0, 1.0)
        for factor in self.factors:
            result = _mul_bounds(result, factor.bounds())
        return result


@dataclass(frozen=True, eq=False)
class Exp(PayoffExpr):
    expr: PayoffExpr

    def leaves(self) -> Iterator['Leaf']:
        return self.expr.leaves()

    def evaluate(self, samples: LeafSamples, n: int) -> np.ndarray:
        with np.errstate(over='ignore'):
            return np.exp(self.expr.evaluate(samples, n))

    def bounds(self) -> Bounds:
        lo, hi = self.expr.bounds()
        with np.errstate(over='ignore'):
            return float(np.exp(lo)), float(np.exp(hi))


class Leaf(PayoffExpr):
    """葉の基底クラス"""

    def leaves(self) -> Iterator['Leaf']:
        yield self

    def evaluate(self, samples: LeafSamples, n: int) -> np.ndarray:
        return self.apply(samples[id(self)])

    @abstractmethod
    def apply(self, values: np.ndarray) -> np.ndarray:
        """汎関数値（またはパス）から葉の値を計算"""


class GaussianLeaf(Leaf):
    """ステップ関数汎関数 ∫ c' dB の関数として表される葉"""

    @abstractmethod
    def functionals(self) -> List[StepFunction]:
        """葉が参照する汎関数の係数（d 次元ベクトル値）"""


def _unit_vector(dim: int, index: int) -> np.ndarray:
    if not 0 <= index < dim:
        raise ValueError(f"Coordinate {index} outside 0..{dim - 1}")
    e = np.zeros(dim)
    e[index] = 1.0
    return e


@dataclass(frozen=True, eq=False)
class LinearForm(GaussianLeaf):
    """終端標準ガウス Z = B_T/√T の一次形式 a'Z"""
    coeffs: np.ndarray
    horizon: float = 1.0

    def __post_init__(self):
        coeffs = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if coeffs.ndim != 1:
            raise ValueError("LinearForm coefficients must be a vector")
        object.__setattr__(self, 'coeffs', coeffs)

    def functionals(self) -> List[StepFunction]:
        grid = TimeGrid.uniform(self.horizon, 1)
        return [StepFunction.constant(grid, self.coeffs / math.sqrt(self.horizon))]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return values[:, 0]

    def bounds(self) -> Bounds:
        if np.any(self.coeffs != 0):
            return -math.inf, math.inf
        return 0.0, 0.0


@dataclass(frozen=True, eq=False)
class StochasticIntegral(GaussianLeaf):
    """確定的なステップ関数 φ による確率積分 ∫_0^T φ_t' dB_t"""
    integrand: StepFunction

    def __post_init__(self):
        if len(self.integrand.block_shape) != 1:
            raise ValueError("StochasticIntegral needs a vector-valued integrand")

    @property
    def variance(self) -> float:
        return self.integrand.squared_norm()

    def functionals(self) -> List[StepFunction]:
        return [self.integrand]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return values[:, 0]

    def bounds(self) -> Bounds:
        if self.variance > 0:
            return -math.inf, math.inf
        return 0.0, 0.0


@dataclass(frozen=True, eq=False)
class TerminalIndicator(GaussianLeaf):
    """デジタル 1_{B^i_T >= K}"""
    index: int
    strike: float = 0.0
    horizon: float = 1.0
    dim: int = 1

    def functionals(self) -> List[StepFunction]:
        grid = TimeGrid.uniform(self.horizon, 1)
        return [StepFunction.constant(grid, _unit_vector(self.dim, self.index))]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values[:, 0] >= self.strike).astype(float)

    def bounds(self) -> Bounds:
        return 0.0, 1.0


@dataclass(frozen=True, eq=False)
class TerminalFunction(GaussianLeaf):
    """終端値 B_T の点ごとの関数 func: (N, d) -> (N,)"""
    func: Callable[[np.ndarray], np.ndarray]
    horizon: float = 1.0
    dim: int = 1
    value_bounds: Bounds = (-math.inf, math.inf)
    name: str = "terminal_function"

    def functionals(self) -> List[StepFunction]:
        grid = TimeGrid.uniform(self.horizon, 1)
        return [
            StepFunction.constant(grid, _unit_vector(self.dim, i))
            for i in range(self.dim)
        ]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(values), dtype=float).reshape(values.shape[0])

    def bounds(self) -> Bounds:
        return self.value_bounds


@dataclass(frozen=True, eq=False)
class PathFunctional(Leaf):
    """離散パス B_{t_0..t_n} の関数 func: (N, n+1, d) -> (N,)"""
    func: Callable[[np.ndarray], np.ndarray]
    grid: TimeGrid
    dim: int = 1
    value_bounds: Bounds = (-math.inf, math.inf)
    name: str = "path_functional"

    def apply(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(values), dtype=float).reshape(values.shape[0])

    def bounds(self) -> Bounds:
        return self.value_bounds


def standard_normal(dim: int = 1, index: int = 0, horizon: float = 1.0) -> LinearForm:
    """Z_i = B^i_T/√T"""
    return LinearForm(_unit_vector(dim, index), horizon)


def terminal_coordinate(dim: int = 1, index: int = 0, horizon: float = 1.0) -> LinearForm:
    """B^i_T"""
    return LinearForm(_unit_vector(dim, index) * math.sqrt(horizon), horizon)


def stochastic_integral(integrand: StepFunction) -> StochasticIntegral:
    return StochasticIntegral(integrand)


def linear_combination(
    terms: Sequence[PayoffExpr],
    weights: Sequence[float]
) -> PayoffExpr:
    """Σ w_i X_i"""
    if len(terms) != len(weights):
        raise ValueError("terms and weights differ in length")
    if not terms:
        return Constant(0.0)
    return Sum(tuple(float(w) * term for term, w in zip(terms, weights)))


def unique_leaves(exprs: Sequence[PayoffExpr]) -> List[Leaf]:
    """式群の葉を重複なく出現順に列挙"""
    seen = {}
    for expr in exprs:
        for leaf in expr.leaves():
            seen.setdefault(id(leaf), leaf)
    return list(seen.values())


def constant_value(expr: PayoffExpr) -> Optional[float]:
    """定数式ならその値、そうでなければ None"""
    if not expr.is_constant:
        return None
    return float(expr.evaluate({}, 1)[0])
