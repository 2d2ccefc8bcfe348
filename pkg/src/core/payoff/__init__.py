# payoff パッケージ
from .grid import TimeGrid, StepFunction
from .expressions import (
    PayoffExpr,
    Constant,
    LinearForm,
    StochasticIntegral,
    TerminalIndicator,
    TerminalFunction,
    PathFunctional,
    standard_normal,
    terminal_coordinate,
    stochastic_integral,
    linear_combination,
)
from .engine import (
    Estimate,
    ExpectationEngine,
    SampleSet,
    estimate,
    expect,
    log_expect_exp,
    tilted_expect,
    essential_range,
    sample_paths,
    evaluate_on_paths,
)

__all__ = [
    'TimeGrid',
    'StepFunction',
    'PayoffExpr',
    'Constant',
    'LinearForm',
    'StochasticIntegral',
    'TerminalIndicator',
    'TerminalFunction',
    'PathFunctional',
    'standard_normal',
    'terminal_coordinate',
    'stochastic_integral',
    'linear_combination',
    'Estimate',
    'ExpectationEngine',
    'SampleSet',
    'estimate',
    'expect',
    'log_expect_exp',
    'tilted_expect',
    'essential_range',
    'sample_paths',
    'evaluate_on_paths',
]
