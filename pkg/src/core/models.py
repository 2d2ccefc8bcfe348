"""
閉形式のモデル族

- Bachelier: 保有と資産が確定的な被積分関数による確率積分
- デジタル: Σ_0 = 0, Ψ = 1_{B_T >= 0}
- 2次元デジタル＋線形: 制約集合が閉だが凸でない例
"""
from dataclasses import dataclass
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import log_ndtr

from src.core.maker import HProvider, InvestorSpec, MakerSpec
from src.core.payoff import (
    Constant,
    StepFunction,
    StochasticIntegral,
    TerminalIndicator,
)
from src.utils.logger import logger
from src.utils.normal import log_norm_pdf, norm_cdf, norm_pdf

_HORIZON_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class BachelierSpec:
    """
    Bachelier モデル

    Σ_0 = ∫f'dB, Σ_1 = ∫g'dB, Ψ_j = ∫ψ[:, j]'dB, h = ∫y'dB
    """
    f: StepFunction
    g: StepFunction
    psi: StepFunction
    y: Optional[StepFunction] = None

    def __post_init__(self):
        d = self.psi.values.shape[1]
        if self.psi.block_shape != (d, d):
            raise ValueError(f"psi must be d x d per interval, got {self.psi.block_shape}")
        for name in ('f', 'g', 'y'):
            value = getattr(self, name)
            if value is None:
                continue
            if value.block_shape != (d,):
                raise ValueError(f"{name} must be a {d}-vector per interval, got {value.block_shape}")
            if abs(value.grid.horizon - self.horizon) > _HORIZON_TOL * self.horizon:
                raise ValueError(f"{name} horizon {value.grid.horizon} differs from {self.horizon}")
        cond = self.psi.condition_numbers()
        if not np.all(np.isfinite(cond)) or np.any(cond > 1.0 / np.finfo(float).eps):
            raise ValueError("psi must be invertible on every interval")
        logger.debug(f"Bachelier psi condition numbers: max {float(cond.max()):.3e}")

    @property
    def dim(self) -> int:
        return self.psi.values.shape[1]

    @property
    def horizon(self) -> float:
        return self.psi.grid.horizon

    @property
    def condition_numbers(self) -> np.ndarray:
        return self.psi.condition_numbers()

    def maker_endowment(self) -> StochasticIntegral:
        return StochasticIntegral(self.f)

    def investor_endowment(self) -> StochasticIntegral:
        return StochasticIntegral(self.g)

    def assets(self) -> Tuple[StochasticIntegral, ...]:
        return tuple(StochasticIntegral(self.psi.column(j)) for j in range(self.dim))

    def claim(self) -> StochasticIntegral:
        if self.y is None:
            raise ValueError("Bachelier spec has no claim integrand y")
        return StochasticIntegral(self.y)

    def maker(self, gamma: float) -> MakerSpec:
        return MakerSpec(gamma, self.assets(), self.maker_endowment())

    def investor(self, alpha: float) -> InvestorSpec:
        return InvestorSpec(alpha, self.investor_endowment())


def bachelier_H(spec: BachelierSpec, t: float, q, gamma: float = 1.0) -> np.ndarray:
    """H_t(q) = -γ(f_t + ψ_t q)"""
    q = np.asarray(q, dtype=float)
    return -gamma * (spec.f.at(t) + q @ spec.psi.at(t).T)


def bachelier_position_for(spec: BachelierSpec, t: float, pi, gamma: float = 1.0) -> np.ndarray:
    """π に対応する需要 Q_t = -(γψ_t)^{-1}π_t"""
    pi = np.asarray(pi, dtype=float)
    return -np.linalg.solve(gamma * spec.psi.at(t), pi.T).T


class BachelierModel(HProvider):
    """Bachelier モデルの H（K°_t = ℝ^d）"""

    def __init__(self, spec: BachelierSpec, gamma: float):
        self.spec = spec
        self.gamma = gamma
        self.dim = spec.dim
        self.k = spec.dim

    def H(self, t: float, state: np.ndarray, q: np.ndarray) -> np.ndarray:
        return bachelier_H(self.spec, t, q, self.gamma)


@dataclass(frozen=True)
class DigitalSpec:
    """デジタル資産 Ψ = 1_{B_T >= 0}、Σ_0 = 0"""
    gamma: float
    horizon: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    def tau(self, t) -> np.ndarray:
        tau = self.horizon - np.asarray(t, dtype=float)
        if np.any(tau <= 0):
            raise ValueError(f"Digital model needs t < T = {self.horizon}")
        return tau

    def maker(self) -> MakerSpec:
        return MakerSpec(
            self.gamma,
            (TerminalIndicator(0, 0.0, self.horizon, 1),),
            Constant(0.0)
        )


def _digital_ratios(spec: DigitalSpec, t, b):
    tau = spec.tau(t)
    sqrt_tau = np.sqrt(tau)
    x = np.asarray(b, dtype=float) / sqrt_tau
    log_pdf = log_norm_pdf(x)
    # Φ(x)/φ(x) と Φ(-x)/φ(x)
    upper_ratio = np.exp(log_ndtr(x) - log_pdf)
    lower_ratio = np.exp(log_ndtr(-x) - log_pdf)
    return sqrt_tau, upper_ratio, lower_ratio


def digital_value(spec: DigitalSpec, t, b, q) -> np.ndarray:
    """v(t,b;q) = -log(e^{-γq} + Φ(-b/√τ)(1 - e^{-γq}))"""
    tau = spec.tau(t)
    s = -spec.gamma * np.asarray(q, dtype=float)
    a = norm_cdf(-np.asarray(b, dtype=float) / np.sqrt(tau))
    # log(e^s + a(1 - e^s)) = log(a + (1-a)e^s)
    return -np.logaddexp(np.log(a), np.log1p(-a) + s)


def digital_H(spec: DigitalSpec, t, b, q) -> np.ndarray:
    """
    H_t(q) = -∂_b v(t,b;q) = (e^{-γq} - 1)φ(b/√τ) / (√τ N)

    N = e^{-γq} + Φ(-b/√τ)(1 - e^{-γq})。q について狭義単調減少。
    """
    sqrt_tau, upper_ratio, lower_ratio = _digital_ratios(spec, t, b)
    s = -spec.gamma * np.asarray(q, dtype=float)
    s, sqrt_tau, upper_ratio, lower_ratio = np.broadcast_arrays(
        s, sqrt_tau, upper_ratio, lower_ratio
    )
    out = np.empty(s.shape)
    short = s <= 0
    # q >= 0: H = expm1(s) / (√τ(e^s Φ/φ + Φ(-x)/φ))
    out[short] = np.expm1(s[short]) / (
        sqrt_tau[short] * (np.exp(s[short]) * upper_ratio[short] + lower_ratio[short])
    )
    # q < 0: 分子分母を e^s で割る
    long_ = ~short
    out[long_] = -np.expm1(-s[long_]) / (
        sqrt_tau[long_] * (upper_ratio[long_] + np.exp(-s[long_]) * lower_ratio[long_])
    )
    return out if out.ndim else float(out)


def digital_constraint_interval(spec: DigitalSpec, t, b) -> Tuple[float, float]:
    """
    K°_t の開区間 (-φ/(√τ(1-Φ)), φ/(√τΦ))（x = b/√τ で評価）

    q → +∞ で下端、q → -∞ で上端に近づく。
    """
    sqrt_tau, upper_ratio, lower_ratio = _digital_ratios(spec, t, b)
    return float(-1.0 / (sqrt_tau * lower_ratio)), float(1.0 / (sqrt_tau * upper_ratio))


class DigitalModel(HProvider):
    """デジタル資産モデルの H（状態は B_t）"""
    dim = 1
    k = 1

    def __init__(self, spec: DigitalSpec):
        self.spec = spec

    def H(self, t: float, state: np.ndarray, q: np.ndarray) -> np.ndarray:
        return np.asarray(digital_H(self.spec, t, state[:, 0], q[:, 0])).reshape(-1, 1)


@dataclass(frozen=True)
class TwoDDigitalSpec:
    """2次元デジタル＋線形の請求権と評価点 (t, b_1, b_2)"""
    horizon: float = 1.0
    t: float = 0.0
    b1: float = 0.0
    b2: float = 0.0

    def __post_init__(self):
        if not 0 <= self.t < self.horizon:
            raise ValueError(f"Need 0 <= t < T, got t={self.t}, T={self.horizon}")
        if not (math.isfinite(self.b1) and math.isfinite(self.b2)):
            raise ValueError("b1 and b2 must be finite")

    @property
    def tau(self) -> float:
        return self.horizon - self.t

    @property
    def A(self) -> float:
        return float(norm_cdf(-self.b2 / math.sqrt(self.tau)))

    @property
    def C(self) -> float:
        return math.sqrt(self.tau) / float(norm_pdf(-self.b2 / math.sqrt(self.tau)))

    @property
    def p2_interval(self) -> Tuple[float, float]:
        """p_2 の開区間 (-1/((1-A)C), 1/(AC))"""
        return -1.0 / ((1.0 - self.A) * self.C), 1.0 / (self.A * self.C)


@dataclass(frozen=True)
class RegionMembership:
    """K°_t への所属判定（境界の対数特異点では inside=False, at_singularity=True）"""
    inside: bool
    at_singularity: bool = False

    def __bool__(self) -> bool:
        return self.inside


def _region_inequality(spec: TwoDDigitalSpec, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    tau, A, C = spec.tau, spec.A, spec.C
    lhs = (tau * p1 - spec.b1) ** 2
    with np.errstate(divide='ignore', invalid='ignore'):
        log_term = np.log1p((1.0 - A) * C * p2) - np.log1p(-A * C * p2)
    rhs = 2.0 * tau * (1.0 - 2.0 * (1.0 - A * C * p2) * (1.0 - A)) * log_term
    return lhs >= rhs - 1e-12 * (1.0 + np.abs(rhs))


def twod_region_membership(spec: TwoDDigitalSpec, p1: float, p2: float) -> RegionMembership:
    """
    (p_1, p_2) ∈ K°_t の判定

    -1/((1-A)C) < p_2 < 1/(AC) かつ
    (τp_1 - b_1)² >= 2τ(1 - 2(1 - ACp_2)(1 - A)) log((1 + (1-A)Cp_2)/(1 - ACp_2))
    等号の場合は所属とみなす。
    """
    lo, hi = spec.p2_interval
    if math.isclose(p2, lo, rel_tol=1e-12) or math.isclose(p2, hi, rel_tol=1e-12):
        return RegionMembership(False, True)
    if not lo < p2 < hi:
        return RegionMembership(False)
    return RegionMembership(bool(_region_inequality(spec, np.float64(p1), np.float64(p2))))


@dataclass
class RegionRaster:
    """K°_t のラスタ（行が p_2、列が p_1）"""
    p1: np.ndarray
    p2: np.ndarray
    inside: np.ndarray  # shape (len(p2), len(p1))

    def rows(self) -> List[Tuple[float, float, bool]]:
        """CSV 出力用の (p1, p2, in_region)"""
        return [
            (float(self.p1[i]), float(self.p2[j]), bool(self.inside[j, i]))
            for j in range(self.p2.size)
            for i in range(self.p1.size)
        ]

    def nonconvex_triple(self) -> Optional[Tuple[Tuple[float, float], ...]]:
        """同一行で true-false-true と並ぶ3点（凸でないことの証拠）"""
        for j in range(self.p2.size):
            row = self.inside[j]
            true_idx = np.flatnonzero(row)
            for i in np.flatnonzero(~row):
                if np.any(true_idx < i) and np.any(true_idx > i):
                    left = int(true_idx[true_idx < i][-1])
                    right = int(true_idx[true_idx > i][0])
                    p2 = float(self.p2[j])
                    return (
                        (float(self.p1[left]), p2),
                        (float(self.p1[i]), p2),
                        (float(self.p1[right]), p2),
                    )
        return None


def region_raster(
    spec: TwoDDigitalSpec,
    p1_range: Tuple[float, float],
    p2_range: Tuple[float, float],
    resolution: Tuple[int, int] = (101, 101)
) -> RegionRaster:
    """K°_t を (p_1, p_2) 格子上で判定する"""
    n1, n2 = resolution
    if n1 < 2 or n2 < 2:
        raise ValueError(f"Raster resolution must be at least 2 per axis, got {resolution}")
    p1 = np.linspace(p1_range[0], p1_range[1], n1)
    p2 = np.linspace(p2_range[0], p2_range[1], n2)
    lo, hi = spec.p2_interval
    grid_p1, grid_p2 = np.meshgrid(p1, p2)
    in_band = (grid_p2 > lo) & (grid_p2 < hi)
    inside = np.zeros(grid_p1.shape, dtype=bool)
    inside[in_band] = _region_inequality(spec, grid_p1[in_band], grid_p2[in_band])
    logger.info(f"Region raster {n1}x{n2}: {int(inside.sum())} cells inside")
    return RegionRaster(p1, p2, inside)
