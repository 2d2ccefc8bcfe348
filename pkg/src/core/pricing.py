"""
請求権の価格付け

複製資本による無裁定価格帯 [h̲(u), h̄(u)]、強い無裁定価格 E_0[h]、
需要スケジュール、無差別価格、投資家の価値関数、Bachelier の閉形式。
"""
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
import math
from typing import Iterable, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from src.core.errors import (
    NoFiniteDemandError,
    NumericOverflowError,
    SolverError,
    UnsupportedExpressionError,
)
from src.core.maker import InvestorSpec, MakerSpec
from src.core.models import BachelierSpec
from src.core.payoff import (
    ExpectationEngine,
    PayoffExpr,
    SampleSet,
    StepFunction,
    essential_range,
)
from src.core.payoff.expressions import as_expr, constant_value
from src.utils.logger import logger
from src.utils.root_finding import solve_monotone
from config.settings import CLASSIFY_REL_TOL, INTEGRABILITY_P, STRONG_PRICE_TOL


class PriceClass(str, Enum):
    """ある数量水準での価格の分類"""
    ARBITRAGE_FREE = "arbitrage_free"
    SELL_ARBITRAGE = "sell_arbitrage"
    BUY_ARBITRAGE = "buy_arbitrage"


@dataclass(frozen=True, eq=False)
class ClaimSetup:
    """メイカー・投資家・請求権 h・期待値エンジンの組"""
    maker: MakerSpec
    investor: InvestorSpec
    claim: PayoffExpr
    engine: ExpectationEngine

    def __post_init__(self):
        object.__setattr__(self, 'claim', as_expr(self.claim))
        self.check_integrability()

    def check_integrability(self, p: float = INTEGRABILITY_P) -> None:
        """
        E[e^{-γΣ_0 + p(|Ψ|+|h|)}] と E[e^{-αΣ_1 + p|h|}] の有限性を標本上で確認する

        |Ψ| は成分の絶対値の和で評価する。資産を加えると求積の次元を
        超える場合は、価格計算と同じ標本で |h| の項だけを確認する。
        """
        maker, investor = self.maker, self.investor
        try:
            samples = self.engine.prepare(
                [maker.endowment, investor.endowment, self.claim, *maker.assets]
            )
            maker_terms = (*maker.assets, self.claim)
        except UnsupportedExpressionError as e:
            logger.warning(f"Checking integrability without the traded assets: {e}")
            samples = self.samples
            maker_terms = (self.claim,)
        samples.check_exp_moment(
            -maker.gamma * maker.endowment, maker_terms, p, "maker exponential moment"
        )
        samples.check_exp_moment(
            -investor.alpha * investor.endowment, (self.claim,), p, "investor exponential moment"
        )

    @property
    def beta(self) -> float:
        """1/β = 1/α + 1/γ"""
        alpha, gamma = self.investor.alpha, self.maker.gamma
        return alpha * gamma / (alpha + gamma)

    @property
    def gamma(self) -> float:
        return self.maker.gamma

    @property
    def total_endowment(self) -> PayoffExpr:
        """Σ_0 + Σ_1"""
        return self.maker.endowment + self.investor.endowment

    @cached_property
    def samples(self) -> SampleSet:
        return self.engine.prepare(
            [self.maker.endowment, self.investor.endowment, self.claim]
        )

    @cached_property
    def claim_range(self) -> Tuple[float, float]:
        """(ess inf h, ess sup h)"""
        return essential_range(self.engine, self.claim)

    def with_investor_endowment(self, endowment: PayoffExpr) -> 'ClaimSetup':
        return replace(self, investor=InvestorSpec(self.investor.alpha, endowment))


@dataclass(frozen=True)
class PriceBounds:
    """数量 u での無裁定価格帯"""
    u: float
    lower: float
    q0_price: float
    upper: float


@dataclass(frozen=True)
class DemandPoint:
    """需要スケジュールの点 (p, û(p))"""
    p: float
    u_hat: float
    residual: float
    exact_arbitrage: bool = False


def _check_size(u: float) -> float:
    u = float(u)
    if not math.isfinite(u) or u < 0:
        raise ValueError(f"Position size must be a finite non-negative number, got {u}")
    return u


def _log_ratio(samples: SampleSet, exponent: PayoffExpr, reference: PayoffExpr, hint: str) -> float:
    try:
        return samples.log_mean_exp(exponent).value - samples.log_mean_exp(reference).value
    except NumericOverflowError as e:
        raise NumericOverflowError(str(e.args[0]), hint) from e


def q0_price(setup: ClaimSetup) -> float:
    """E_0[h]"""
    return setup.samples.tilted_mean(setup.claim, -setup.gamma * setup.maker.endowment).value


def upper_bound(setup: ClaimSetup, u: float) -> float:
    """
    売りの複製資本 h̄(u) = (1/γu) log E_0[e^{γuh}]

    u = 0 では極限値 E_0[h] を返す。
    """
    u = _check_size(u)
    const = constant_value(setup.claim)
    if const is not None:
        return const
    if u == 0.0:
        return q0_price(setup)
    gamma = setup.gamma
    base = -gamma * setup.maker.endowment
    log_ratio = _log_ratio(
        setup.samples, base + (gamma * u) * setup.claim, base, "use a smaller position size"
    )
    return log_ratio / (gamma * u)


def lower_bound(setup: ClaimSetup, u: float) -> float:
    """買いの複製資本 h̲(u) = -(1/γu) log E_0[e^{-γuh}]"""
    u = _check_size(u)
    const = constant_value(setup.claim)
    if const is not None:
        return const
    if u == 0.0:
        return q0_price(setup)
    gamma = setup.gamma
    base = -gamma * setup.maker.endowment
    log_ratio = _log_ratio(
        setup.samples, base - (gamma * u) * setup.claim, base, "use a smaller position size"
    )
    return -log_ratio / (gamma * u)


def price_bounds(setup: ClaimSetup, u: float) -> PriceBounds:
    return PriceBounds(u, lower_bound(setup, u), q0_price(setup), upper_bound(setup, u))


def classify_price(setup: ClaimSetup, p: float, u: float) -> PriceClass:
    """
    数量 u での価格 p の分類（閉区間 [h̲(u), h̄(u)] の端点は無裁定）
    """
    tol = CLASSIFY_REL_TOL * (1.0 + abs(p))
    if p > upper_bound(setup, u) + tol:
        return PriceClass.SELL_ARBITRAGE
    if p < lower_bound(setup, u) - tol:
        return PriceClass.BUY_ARBITRAGE
    return PriceClass.ARBITRAGE_FREE


def strong_classify(setup: ClaimSetup, p: float, tol: float = STRONG_PRICE_TOL) -> bool:
    """すべての数量で無裁定（p = E_0[h]）か"""
    return abs(p - q0_price(setup)) <= tol * (1.0 + abs(p))


def arbitrage_gain(setup: ClaimSetup, p: float, u: float) -> float:
    """
    数量 u で p が価格帯外にある場合の無リスク利益 u·(p - h̄) または u·(h̲ - p)
    """
    u = _check_size(u)
    if u == 0.0:
        return 0.0
    excess = max(p - upper_bound(setup, u), lower_bound(setup, u) - p, 0.0)
    return u * excess


def marginal_price(setup: ClaimSetup, u: float) -> float:
    """
    E[h e^{-β(Σ_0+Σ_1+uh)}] / E[e^{-β(Σ_0+Σ_1+uh)}]

    数量 u を保有する投資家の限界価格。
    """
    tilt = -setup.beta * (setup.total_endowment + float(u) * setup.claim)
    return setup.samples.tilted_mean(setup.claim, tilt).value


def demand(setup: ClaimSetup, p: float) -> DemandPoint:
    """
    価格 p での最適需要 û(p)（限界価格 = p の根）

    Raises:
        NoFiniteDemandError: p が (ess inf h, ess sup h) の外にある場合
        BracketError: ブラケット拡大が上限に達した場合
    """
    lo, hi = setup.claim_range
    if not lo < p < hi:
        logger.warning(f"Price {p} outside the claim range ({lo}, {hi})")
        raise NoFiniteDemandError(
            f"No finite demand at p={p}: price lies outside ({lo}, {hi})"
        )
    result = solve_monotone(
        lambda u: marginal_price(setup, u) - p,
        abs_tol=setup.engine.abs_tol,
        name=f"demand at p={p}"
    )
    return DemandPoint(p, result.root, result.residual)


def demand_schedule(
    setup: ClaimSetup,
    prices: Iterable[float],
    spec: Optional[BachelierSpec] = None,
    progress: bool = False
) -> List[DemandPoint]:
    """
    価格格子上の需要スケジュール

    Bachelier の場合は最適戦略が厳密な裁定になる点に印を付ける。
    """
    points = []
    for p in tqdm(list(prices), desc="demand schedule", disable=not progress):
        point = demand(setup, float(p))
        if spec is not None:
            norms = bachelier_residual_integrand(
                spec, setup.gamma, setup.investor.alpha, point.u_hat
            )
            if float(np.max(norms.values)) <= CLASSIFY_REL_TOL * (1.0 + abs(point.u_hat)):
                logger.warning(f"Optimal strategy at p={p} is an exact arbitrage")
                point = replace(point, exact_arbitrage=True)
        points.append(point)
    return points


def indifference_price(setup: ClaimSetup, u: float) -> float:
    """
    p^I(u) = -(1/βu) log(E[e^{-β(Σ_0+Σ_1+uh)}] / E[e^{-β(Σ_0+Σ_1)}])

    u = 0 では限界価格の極限を返す。
    """
    u = float(u)
    const = constant_value(setup.claim)
    if const is not None:
        return const
    if u == 0.0:
        return marginal_price(setup, 0.0)
    beta = setup.beta
    base = -beta * setup.total_endowment
    log_ratio = _log_ratio(
        setup.samples, base - (beta * u) * setup.claim, base, "use a smaller position size"
    )
    return -log_ratio / (beta * u)


def value_function(setup: ClaimSetup) -> float:
    """
    投資家の価値関数 -E[e^{-γΣ_0}]^{-α/γ} E[e^{-β(Σ_0+Σ_1)}]^{α/β}
    """
    alpha, gamma, beta = setup.investor.alpha, setup.gamma, setup.beta
    samples = setup.samples
    try:
        log_value = (
            -(alpha / gamma) * samples.log_mean_exp(-gamma * setup.maker.endowment).value
            + (alpha / beta) * samples.log_mean_exp(-beta * setup.total_endowment).value
        )
    except NumericOverflowError as e:
        logger.error("Value function overflowed")
        raise NumericOverflowError("Value function is not finite", "reduce the endowments") from e
    if log_value > 709.0:
        raise NumericOverflowError(f"Value function magnitude e^{log_value:.1f} overflows")
    return -math.exp(log_value)


def static_optimal_position(k0, k1, alpha: float, gamma: float) -> np.ndarray:
    """保有が Ψ のポートフォリオ（k_0, k_1）のときの最適静的ポジション (αk_1 - γk_0)/(α+γ)"""
    k0 = np.asarray(k0, dtype=float)
    k1 = np.asarray(k1, dtype=float)
    return (alpha * k1 - gamma * k0) / (alpha + gamma)


def bachelier_optimal_strategy(
    spec: BachelierSpec,
    maker: MakerSpec,
    investor: InvestorSpec
) -> StepFunction:
    """Q̂_t = ψ_t^{-1}(αg_t - γf_t)/(α+γ)"""
    alpha, gamma = investor.alpha, maker.gamma
    rhs = (alpha * spec.g - gamma * spec.f) * (1.0 / (alpha + gamma))
    try:
        return spec.psi.solve(rhs)
    except np.linalg.LinAlgError as e:
        logger.error(f"Singular psi in optimal strategy: {e}")
        raise SolverError("psi is singular; optimal strategy undefined") from e


def bachelier_optimal_pi(spec: BachelierSpec, gamma: float, alpha: float) -> StepFunction:
    """架空市場の最適戦略 π̂ = γ(γf - αg)/(α+γ)"""
    return (gamma * spec.f - alpha * spec.g) * (gamma / (alpha + gamma))


def bachelier_demand(spec: BachelierSpec, beta: float, p: float) -> float:
    """û(p) = -(p + β∫y'(f+g)) / (β∫|y|²)"""
    y = _claim_integrand(spec)
    return -(p + beta * y.inner(spec.f + spec.g)) / (beta * y.squared_norm())


def bachelier_residual_integrand(
    spec: BachelierSpec,
    gamma: float,
    alpha: float,
    u_hat: float
) -> StepFunction:
    """区間ごとのノルム |γf + γûy - αg|（0 なら最適戦略は厳密な裁定）"""
    y = _claim_integrand(spec)
    residual = gamma * spec.f + (gamma * u_hat) * y - alpha * spec.g
    norms = np.linalg.norm(residual.values, axis=1)
    return StepFunction(residual.grid, norms)


def _claim_integrand(spec: BachelierSpec) -> StepFunction:
    if spec.y is None:
        raise ValueError("Bachelier spec has no claim integrand y")
    if spec.y.squared_norm() == 0.0:
        raise ValueError("Claim integrand y vanishes identically")
    return spec.y
