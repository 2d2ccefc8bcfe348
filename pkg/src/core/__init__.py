# core モジュール
from .errors import (
    ImpactPricerError,
    ConfigError,
    SolverError,
    NumericOverflowError,
    UnsupportedExpressionError,
)
from .payoff import ExpectationEngine, PayoffExpr, StepFunction, TimeGrid
from .maker import MakerSpec, InvestorSpec, static_quote
from .pricing import ClaimSetup, PriceClass
from .equilibrium import SegmentedMarket, solve_pepq

__all__ = [
    'ImpactPricerError',
    'ConfigError',
    'SolverError',
    'NumericOverflowError',
    'UnsupportedExpressionError',
    'ExpectationEngine',
    'PayoffExpr',
    'StepFunction',
    'TimeGrid',
    'MakerSpec',
    'InvestorSpec',
    'static_quote',
    'ClaimSetup',
    'PriceClass',
    'SegmentedMarket',
    'solve_pepq'
]
