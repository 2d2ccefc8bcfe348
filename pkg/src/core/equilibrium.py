"""
分断市場の部分均衡 (PEPQ) と大口ポジションの漸近挙動
"""
from dataclasses import dataclass, field
from functools import cached_property
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from src.core.errors import (
    DegenerateMarketError,
    ImpactPricerError,
    NoFiniteDemandError,
)
from src.core.models import BachelierSpec
from src.core.payoff import (
    ExpectationEngine,
    PayoffExpr,
    SampleSet,
    essential_range,
)
from src.core.payoff.expressions import as_expr, constant_value
from src.core.pricing import (
    ClaimSetup,
    PriceClass,
    arbitrage_gain,
    classify_price,
    demand,
)
from src.utils.logger import logger
from src.utils.root_finding import solve_monotone
from config.settings import (
    ASYMPTOTIC_REL_TOL,
    ASYMPTOTIC_WINDOW,
    CLASSIFY_REL_TOL,
    DEGENERACY_VAR_TOL,
)


@dataclass(frozen=True, eq=False)
class SegmentedMarket:
    """
    分断市場: 各投資家は自分の市場のメイカーとのみ取引し、
    投資家同士で請求権 h を相対取引する（A が u 単位買い、B が売る）
    """
    side_a: ClaimSetup
    side_b: ClaimSetup

    def __post_init__(self):
        if self.side_a.claim is not self.side_b.claim:
            raise ValueError("Both sides of a segmented market must reference the same claim")

    @property
    def claim(self) -> PayoffExpr:
        return self.side_a.claim

    @property
    def engine(self) -> ExpectationEngine:
        return self.side_a.engine

    @property
    def witness(self) -> PayoffExpr:
        """β_A(Σ_0^A+Σ_1^A) - β_B(Σ_0^B+Σ_1^B)"""
        return (
            self.side_a.beta * self.side_a.total_endowment
            - self.side_b.beta * self.side_b.total_endowment
        )

    @cached_property
    def samples(self) -> SampleSet:
        a, b = self.side_a, self.side_b
        return self.engine.prepare([
            a.maker.endowment, a.investor.endowment,
            b.maker.endowment, b.investor.endowment,
            self.claim,
        ])

    def witness_variance(self) -> float:
        return _variance(self.samples, self.witness)

    def swapped(self) -> 'SegmentedMarket':
        return SegmentedMarket(self.side_b, self.side_a)

    def marginal_price_a(self, u: float) -> float:
        """A が u を保有したときの限界価格"""
        a = self.side_a
        tilt = -a.beta * (a.total_endowment + float(u) * self.claim)
        return self.samples.tilted_mean(self.claim, tilt).value

    def marginal_price_b(self, u: float) -> float:
        """B が -u を保有したときの限界価格"""
        b = self.side_b
        tilt = -b.beta * (b.total_endowment - float(u) * self.claim)
        return self.samples.tilted_mean(self.claim, tilt).value


def _variance(samples: SampleSet, expr: PayoffExpr) -> float:
    if constant_value(as_expr(expr)) is not None:
        return 0.0
    x = samples.values(expr)
    mean = float(np.dot(samples.weights, x))
    return float(np.dot(samples.weights, (x - mean) ** 2))


@dataclass(frozen=True)
class PepqResult:
    """部分均衡の価格・数量"""
    u_star: float
    p_star: float
    residual_a: float
    residual_b: float
    witness_holds: bool = True


def solve_pepq(market: SegmentedMarket, require_witness: bool = False) -> PepqResult:
    """
    両者の限界価格が一致する数量 u* を求める

    F(u) = m_A(u) - m_B(-u) は u について狭義単調減少。
    β_A(Σ^A) - β_B(Σ^B) が定数のとき u* = 0 が唯一の解となるが、
    require_witness=True では一意性条件として扱いエラーにする。

    Raises:
        DegenerateMarketError: h が定数、または require_witness で条件を満たさない場合
    """
    samples = market.samples
    if _variance(samples, market.claim) < DEGENERACY_VAR_TOL:
        raise DegenerateMarketError(
            "Claim is constant; every quantity clears and the PEPQ is not unique"
        )
    witness_var = market.witness_variance()
    witness_holds = witness_var >= DEGENERACY_VAR_TOL
    if not witness_holds:
        message = (
            "beta_A(Sigma_0^A + Sigma_1^A) - beta_B(Sigma_0^B + Sigma_1^B) is constant "
            f"(variance {witness_var:.3e})"
        )
        if require_witness:
            logger.error(message)
            raise DegenerateMarketError(message)
        logger.warning(f"{message}; the no-trade pair is the equilibrium")

    logger.info("Solving PEPQ first-order condition")
    result = solve_monotone(
        lambda u: market.marginal_price_a(u) - market.marginal_price_b(u),
        abs_tol=market.engine.abs_tol,
        name="PEPQ quantity"
    )
    u_star = result.root
    price_a = market.marginal_price_a(u_star)
    price_b = market.marginal_price_b(u_star)
    p_star = 0.5 * (price_a + price_b)
    logger.info(f"PEPQ: u* = {u_star:.10g}, p* = {p_star:.10g}")
    return PepqResult(u_star, p_star, price_a - p_star, price_b - p_star, witness_holds)


@dataclass(frozen=True)
class SideReport:
    """均衡価格を各市場の価格帯で分類した結果"""
    side: str
    classification: PriceClass
    arbitrage_gain: float


def equilibrium_arbitrage(market: SegmentedMarket, result: PepqResult) -> List[SideReport]:
    """
    均衡価格 p* が数量 |u*| で各市場の無裁定価格帯に入るかを報告する
    """
    size = abs(result.u_star)
    reports = []
    for name, setup in (('A', market.side_a), ('B', market.side_b)):
        cls = classify_price(setup, result.p_star, size)
        gain = arbitrage_gain(setup, result.p_star, size)
        if cls is not PriceClass.ARBITRAGE_FREE:
            logger.info(f"Equilibrium price is a {cls.value} on side {name}, gain {gain:.6g}")
        reports.append(SideReport(name, cls, gain))
    return reports


@dataclass(frozen=True)
class BachelierParty:
    """Bachelier 市場の一方（メイカー γ、投資家 α）"""
    spec: BachelierSpec
    gamma: float
    alpha: float

    @property
    def beta(self) -> float:
        return self.alpha * self.gamma / (self.alpha + self.gamma)


def _check_shared_market(spec_a: BachelierSpec, spec_b: BachelierSpec) -> None:
    """両市場で請求権 y と資産 ψ が同じであることを確認する（f, g は市場ごとに異なってよい）"""
    if spec_a.y is None or spec_b.y is None:
        raise ValueError("Both Bachelier parties need the claim integrand y")
    if spec_a.dim != spec_b.dim:
        raise ValueError(f"Bachelier parties differ in dimension: {spec_a.dim} vs {spec_b.dim}")
    for name in ('y', 'psi'):
        left, right = getattr(spec_a, name), getattr(spec_b, name)
        gap = (left - right).squared_norm()
        scale = left.squared_norm() + right.squared_norm()
        if gap > CLASSIFY_REL_TOL * (1.0 + scale):
            raise ValueError(
                f"Bachelier parties must share {name} (squared L2 gap {gap:.3e})"
            )


def bachelier_pepq(party_a: BachelierParty, party_b: BachelierParty) -> PepqResult:
    """
    Bachelier 分断市場の閉形式

    u* = ∫(β^B(f^B+g^B) - β^A(f^A+g^A))'y / ((β^A+β^B)∫y'y)
    p* = -Γ∫(f^A+g^A+f^B+g^B)'y, 1/Γ = Σ 1/α + Σ 1/γ

    Raises:
        ValueError: 両市場の y または ψ が異なる場合
    """
    _check_shared_market(party_a.spec, party_b.spec)
    y = party_a.spec.y
    y_norm = y.squared_norm()
    if y_norm == 0.0:
        raise DegenerateMarketError("Claim integrand y vanishes identically")
    endow_a = y.inner(party_a.spec.f + party_a.spec.g)
    endow_b = y.inner(party_b.spec.f + party_b.spec.g)
    beta_a, beta_b = party_a.beta, party_b.beta
    u_star = (beta_b * endow_b - beta_a * endow_a) / ((beta_a + beta_b) * y_norm)
    gamma_agg = 1.0 / (
        1.0 / party_a.alpha + 1.0 / party_b.alpha + 1.0 / party_a.gamma + 1.0 / party_b.gamma
    )
    p_star = -gamma_agg * (endow_a + endow_b)
    price_a = -beta_a * (endow_a + u_star * y_norm)
    price_b = -beta_b * (endow_b - u_star * y_norm)
    return PepqResult(u_star, p_star, price_a - p_star, price_b - p_star)


def _tilted_samples(
    engine: ExpectationEngine,
    h: PayoffExpr,
    gamma_sigma0: Optional[PayoffExpr]
) -> Tuple[SampleSet, PayoffExpr]:
    h = as_expr(h)
    base = -as_expr(gamma_sigma0) if gamma_sigma0 is not None else as_expr(0.0)
    return engine.prepare([h, base]), base


def limit_price(
    engine: ExpectationEngine,
    h: PayoffExpr,
    ell: float,
    gamma_sigma0: Optional[PayoffExpr] = None
) -> float:
    """
    p^∞(ℓ) = -(1/ℓ) log E[e^{-ℓh}]

    gamma_sigma0 を与えると -(1/ℓ) log(E[e^{-ℓh-γΣ_0}]/E[e^{-γΣ_0}])。
    ℓ = 0 では E[h]（または γΣ_0 で傾けた平均）。
    """
    h = as_expr(h)
    const = constant_value(h)
    if const is not None:
        return const
    samples, base = _tilted_samples(engine, h, gamma_sigma0)
    if ell == 0.0:
        return samples.tilted_mean(h, base).value
    log_ratio = samples.log_mean_exp(base - ell * h).value - samples.log_mean_exp(base).value
    return -log_ratio / ell


@dataclass(frozen=True)
class RateResult:
    """需要の増加率 ℓ（bounded=True は p = p^∞(0) で需要が有界のまま）"""
    ell: float
    residual: float
    bounded: bool = False


def demand_rate(
    engine: ExpectationEngine,
    h: PayoffExpr,
    p: float,
    gamma_sigma0: Optional[PayoffExpr] = None
) -> RateResult:
    """
    p = E[h e^{-ℓh}] / E[e^{-ℓh}] を満たす ℓ

    Raises:
        NoFiniteDemandError: p が (ess inf h, ess sup h) の外にある場合
    """
    h = as_expr(h)
    samples, base = _tilted_samples(engine, h, gamma_sigma0)
    center = samples.tilted_mean(h, base).value
    if abs(p - center) <= CLASSIFY_REL_TOL * (1.0 + abs(p)):
        logger.info(f"Price {p} equals p_inf(0); demand stays bounded")
        return RateResult(0.0, p - center, True)
    lo, hi = essential_range(engine, h)
    if not lo < p < hi:
        raise NoFiniteDemandError(f"No demand rate at p={p}: outside ({lo}, {hi})")
    result = solve_monotone(
        lambda ell: samples.tilted_mean(h, base - ell * h).value - p,
        abs_tol=engine.abs_tol,
        name=f"demand rate at p={p}"
    )
    return RateResult(result.root, result.residual)


@dataclass(frozen=True)
class AsymptoticPoint:
    """スケジュールの1点"""
    n: int
    beta_a: float
    beta_b: float
    gamma_a: float
    gamma_b: float
    u_star: float
    p_star: float
    scaled: float
    error: Optional[str] = None


@dataclass
class AsymptoticSchedule:
    """漸近スケジュールと検出された極限"""
    points: List[AsymptoticPoint] = field(default_factory=list)
    limit: Optional[float] = None

    @property
    def converged(self) -> bool:
        return self.limit is not None


def detect_limit(
    values: Sequence[float],
    rel_tol: float = ASYMPTOTIC_REL_TOL,
    window: int = ASYMPTOTIC_WINDOW,
    abs_floor: float = 1e-8
) -> Optional[float]:
    """連続する window 点が相対 rel_tol 以内に収まった最初の位置の最終値"""
    run = 1
    for prev, cur in zip(values, values[1:]):
        if not (math.isfinite(prev) and math.isfinite(cur)):
            run = 1
            continue
        if abs(cur - prev) <= rel_tol * max(abs(cur), abs(prev)) + abs_floor:
            run += 1
            if run >= window:
                return cur
        else:
            run = 1
    return None


# スケジュールの尺度: (n, 市場, u*) -> 尺度付きの量
Scale = Callable[[int, SegmentedMarket, float], float]


def gamma_sum_scale(n: int, market: SegmentedMarket, u_star: float) -> float:
    """u*·(γ^A + γ^B)"""
    return u_star * (market.side_a.gamma + market.side_b.gamma)


def per_maker_scale(n: int, market: SegmentedMarket, u_star: float) -> float:
    """u*/n"""
    return u_star / n


def pepq_asymptotics(
    builder: Callable[[int], SegmentedMarket],
    ns: Sequence[int],
    scale: Scale = gamma_sum_scale,
    progress: bool = False
) -> AsymptoticSchedule:
    """
    n ごとの市場で PEPQ を解き、尺度付き数量の極限を検出する

    個々の n での失敗は error 欄に記録して続行する。
    """
    schedule = AsymptoticSchedule()
    scaled_values = []
    for n in tqdm(list(ns), desc="pepq asymptotics", disable=not progress):
        try:
            market = builder(n)
        except ImpactPricerError as e:
            # 指数モーメントの確認は市場の構築時に走る
            logger.warning(f"Market construction failed at n={n}: {e}")
            point = AsymptoticPoint(n, *([math.nan] * 7), e.code)
            schedule.points.append(point)
            scaled_values.append(point.scaled)
            continue
        a, b = market.side_a, market.side_b
        try:
            result = solve_pepq(market)
            scaled = scale(n, market, result.u_star)
            point = AsymptoticPoint(
                n, a.beta, b.beta, a.gamma, b.gamma, result.u_star, result.p_star, scaled
            )
        except ImpactPricerError as e:
            logger.warning(f"PEPQ failed at n={n}: {e}")
            point = AsymptoticPoint(
                n, a.beta, b.beta, a.gamma, b.gamma, math.nan, math.nan, math.nan, e.code
            )
        schedule.points.append(point)
        scaled_values.append(point.scaled)
    schedule.limit = detect_limit(scaled_values)
    if schedule.limit is None:
        logger.warning("No limit detected along the asymptotic schedule")
    else:
        logger.info(f"Asymptotic limit {schedule.limit:.6g}")
    return schedule


@dataclass(frozen=True)
class RatePoint:
    """需要 û_n と r_n = 1/β_n で割った値"""
    n: int
    beta: float
    u_hat: float
    scaled: float


def demand_rate_convergence(
    builder: Callable[[int], ClaimSetup],
    p: float,
    ns: Sequence[int]
) -> List[RatePoint]:
    """β_n ↓ 0 に沿った û_n(p)·β_n（→ ℓ）"""
    points = []
    for n in ns:
        setup = builder(n)
        if points and setup.beta >= points[-1].beta:
            raise ValueError("beta_n must be strictly decreasing along the schedule")
        point = demand(setup, p)
        points.append(RatePoint(n, setup.beta, point.u_hat, point.u_hat * setup.beta))
    return points
