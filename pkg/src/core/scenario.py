"""
シナリオ設定（JSON）の読み込みと検証、モデルの構築

未知のキーはエラーとし、エラーには該当フィールドの JSON パスを含める。
"""
from dataclasses import dataclass, replace
import json
import math
from pathlib import Path
from typing import Any, Callable, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from src.core.equilibrium import (
    BachelierParty,
    SegmentedMarket,
    gamma_sum_scale,
    per_maker_scale,
)
from src.core.errors import ConfigError
from src.core.maker import (
    ConstantDemand,
    DemandRule,
    HProvider,
    InvestorSpec,
    MakerSpec,
    ScheduleDemand,
)
from src.core.models import (
    BachelierModel,
    BachelierSpec,
    DigitalModel,
    DigitalSpec,
    TwoDDigitalSpec,
)
from src.core.payoff import (
    Constant,
    ExpectationEngine,
    LinearForm,
    PayoffExpr,
    StepFunction,
    StochasticIntegral,
    TerminalIndicator,
    TimeGrid,
)
from src.core.payoff.expressions import Exp, Product, Scaled, Sum
from src.core.pricing import ClaimSetup, bachelier_optimal_strategy
from src.utils.logger import logger
from config.settings import (
    ABS_TOL,
    DEFAULT_SEED,
    MC_PATHS,
    QUADRATURE_NODES,
)

FAMILIES = ('bachelier', 'digital', 'twod', 'generic')
COMMANDS = ('quote', 'bounds', 'schedule', 'pepq', 'region', 'simulate', 'asymptotics')

_TOP_KEYS = {
    'name', 'family', 'horizon', 'engine', 'maker', 'investor', 'claim',
    'bachelier', 'twod', 'generic', 'commands',
}
_COMMAND_KEYS = {
    'quote': {'q'},
    'bounds': {'u', 'p'},
    'schedule': {'p', 'p_range'},
    'pepq': {'a', 'b', 'require_witness'},
    'region': {'p1_range', 'p2_range', 'resolution'},
    'simulate': {'n_steps', 'paths', 'demand', 'checks'},
    'asymptotics': {
        'mode', 'ns', 'ell', 'delta', 'p', 'alpha_a', 'alpha_b', 'gamma_a', 'gamma_b',
        'sigma0_a', 'sigma0_b',
    },
}


def _check_keys(
    node: Any,
    path: str,
    allowed: Iterable[str],
    required: Iterable[str] = ()
) -> Mapping[str, Any]:
    if not isinstance(node, Mapping):
        raise ConfigError("expected an object", path)
    unknown = sorted(set(node) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", path)
    for key in required:
        if key not in node:
            raise ConfigError("missing required field", f"{path}.{key}")
    return node


def _number(node: Any, path: str, positive: bool = False) -> float:
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(f"expected a number, got {node!r}", path)
    value = float(node)
    if not math.isfinite(value):
        raise ConfigError("must be finite", path)
    if positive and value <= 0:
        raise ConfigError(f"must be positive, got {value}", path)
    return value


def _integer(node: Any, path: str, minimum: int = 1) -> int:
    if isinstance(node, bool) or not isinstance(node, int):
        raise ConfigError(f"expected an integer, got {node!r}", path)
    if node < minimum:
        raise ConfigError(f"must be at least {minimum}", path)
    return node


def _array(node: Any, path: str) -> np.ndarray:
    try:
        array = np.asarray(node, dtype=float)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"expected a numeric array: {e}", path) from e
    if not np.all(np.isfinite(array)):
        raise ConfigError("array entries must be finite", path)
    return array


def _step_function(node: Any, path: str, grid: TimeGrid, block_shape: Tuple[int, ...]) -> StepFunction:
    """単一ブロック（全区間で一定）または区間ごとのブロック列"""
    array = _array(node, path)
    if array.shape == block_shape or (block_shape == (1,) and array.ndim == 0):
        return StepFunction.constant(grid, array.reshape(block_shape))
    if array.shape == (grid.n_steps,) + block_shape:
        return StepFunction(grid, array)
    if block_shape == (1,) and array.shape == (grid.n_steps,):
        return StepFunction(grid, array)
    raise ConfigError(
        f"expected shape {block_shape} or {(grid.n_steps,) + block_shape}, got {array.shape}", path
    )


def parse_expr(node: Any, path: str, dim: int, horizon: float) -> PayoffExpr:
    """
    JSON の式を PayoffExpr に変換

    {"type": "constant" | "linear" | "terminal" | "integral" | "indicator"
             | "sum" | "scaled" | "product" | "exp", ...}
    """
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        return Constant(_number(node, path))
    if not isinstance(node, Mapping) or 'type' not in node:
        raise ConfigError("expected a number or an expression object with 'type'", path)
    kind = node['type']
    if kind == 'constant':
        _check_keys(node, path, {'type', 'value'}, {'value'})
        return Constant(_number(node['value'], f"{path}.value"))
    if kind in ('linear', 'terminal'):
        _check_keys(node, path, {'type', 'coeffs'}, {'coeffs'})
        coeffs = _array(node['coeffs'], f"{path}.coeffs").reshape(-1)
        if coeffs.size != dim:
            raise ConfigError(f"expected {dim} coefficients, got {coeffs.size}", f"{path}.coeffs")
        if kind == 'terminal':
            coeffs = coeffs * math.sqrt(horizon)
        return LinearForm(coeffs, horizon)
    if kind == 'integral':
        _check_keys(node, path, {'type', 'grid', 'n_steps', 'values'}, {'values'})
        grid = _grid(node, path, horizon)
        return StochasticIntegral(_step_function(node['values'], f"{path}.values", grid, (dim,)))
    if kind == 'indicator':
        _check_keys(node, path, {'type', 'index', 'strike'})
        index = node.get('index', 0)
        if isinstance(index, bool) or not isinstance(index, int) or not 0 <= index < dim:
            raise ConfigError(f"index must be in 0..{dim - 1}", f"{path}.index")
        strike = _number(node.get('strike', 0.0), f"{path}.strike")
        return TerminalIndicator(index, strike, horizon, dim)
    if kind == 'sum':
        _check_keys(node, path, {'type', 'terms'}, {'terms'})
        terms = _list(node['terms'], f"{path}.terms")
        return Sum(tuple(parse_expr(t, f"{path}.terms[{i}]", dim, horizon) for i, t in enumerate(terms)))
    if kind == 'scaled':
        _check_keys(node, path, {'type', 'factor', 'expr'}, {'factor', 'expr'})
        return Scaled(
            _number(node['factor'], f"{path}.factor"),
            parse_expr(node['expr'], f"{path}.expr", dim, horizon)
        )
    if kind == 'product':
        _check_keys(node, path, {'type', 'factors'}, {'factors'})
        factors = _list(node['factors'], f"{path}.factors")
        return Product(tuple(
            parse_expr(f, f"{path}.factors[{i}]", dim, horizon) for i, f in enumerate(factors)
        ))
    if kind == 'exp':
        _check_keys(node, path, {'type', 'expr'}, {'expr'})
        return Exp(parse_expr(node['expr'], f"{path}.expr", dim, horizon))
    raise ConfigError(f"unknown expression type {kind!r}", f"{path}.type")


def _list(node: Any, path: str) -> List[Any]:
    if not isinstance(node, list) or not node:
        raise ConfigError("expected a non-empty array", path)
    return node


def _grid(node: Mapping[str, Any], path: str, horizon: float) -> TimeGrid:
    if 'grid' in node and 'n_steps' in node:
        raise ConfigError("give either grid or n_steps, not both", path)
    try:
        if 'grid' in node:
            grid = TimeGrid(_array(node['grid'], f"{path}.grid"))
        else:
            grid = TimeGrid.uniform(horizon, _integer(node.get('n_steps', 1), f"{path}.n_steps"))
    except ValueError as e:
        raise ConfigError(str(e), f"{path}.grid") from e
    if abs(grid.horizon - horizon) > 1e-12 * horizon:
        raise ConfigError(f"grid must end at the horizon {horizon}", f"{path}.grid")
    return grid


def _float_list(node: Any, path: str) -> List[float]:
    return [_number(v, f"{path}[{i}]") for i, v in enumerate(_list(node, path))]


def _range(node: Any, path: str) -> Tuple[float, float]:
    values = _float_list(node, path)
    if len(values) != 2 or not values[0] < values[1]:
        raise ConfigError("expected [low, high] with low < high", path)
    return values[0], values[1]


@dataclass(frozen=True)
class EngineConfig:
    method: str = 'quadrature'
    nodes: int = QUADRATURE_NODES
    paths: int = MC_PATHS
    seed: int = DEFAULT_SEED
    abs_tol: float = ABS_TOL

    def build(self) -> ExpectationEngine:
        return ExpectationEngine(
            method=self.method, nodes=self.nodes, paths=self.paths,
            seed=self.seed, abs_tol=self.abs_tol
        )


def _parse_engine(node: Any) -> EngineConfig:
    node = _check_keys(node, '$.engine', {'method', 'nodes', 'paths', 'seed', 'abs_tol'})
    method = node.get('method', 'quadrature')
    if method not in ('quadrature', 'mc'):
        raise ConfigError("must be 'quadrature' or 'mc'", '$.engine.method')
    seed = node.get('seed', DEFAULT_SEED)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("must be a non-negative integer", '$.engine.seed')
    return EngineConfig(
        method=method,
        nodes=_integer(node.get('nodes', QUADRATURE_NODES), '$.engine.nodes'),
        paths=_integer(node.get('paths', MC_PATHS), '$.engine.paths'),
        seed=seed,
        abs_tol=_number(node.get('abs_tol', ABS_TOL), '$.engine.abs_tol', positive=True),
    )


@dataclass(frozen=True)
class AsymptoticPlan:
    """asymptotics コマンドの実行計画"""
    mode: str
    ns: Tuple[int, ...]
    builder: Callable[[int], Any]
    scale: Optional[Callable] = None
    price: Optional[float] = None


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """検証済みのシナリオ設定"""
    name: str
    family: str
    horizon: float
    engine: EngineConfig
    data: Mapping[str, Any]

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'ScenarioConfig':
        _check_keys(data, '$', _TOP_KEYS, {'family'})
        family = data['family']
        if family not in FAMILIES:
            raise ConfigError(f"must be one of {list(FAMILIES)}", '$.family')
        horizon = _number(data.get('horizon', 1.0), '$.horizon', positive=True)
        engine = _parse_engine(data.get('engine', {}))
        commands = data.get('commands', {})
        _check_keys(commands, '$.commands', COMMANDS)
        for command, node in commands.items():
            _check_keys(node, f"$.commands.{command}", _COMMAND_KEYS[command])
        config = cls(str(data.get('name', 'scenario')), family, horizon, engine, data)
        # モデル部分の検証を先に済ませる
        if family == 'bachelier':
            config.bachelier_spec()
        elif family == 'twod':
            config.twod_spec()
        elif family == 'digital' or 'maker' in data:
            config.maker()
        return config

    def with_engine(self, **overrides) -> 'ScenarioConfig':
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, engine=replace(self.engine, **changes))

    @property
    def dim(self) -> int:
        if self.family == 'bachelier':
            return self.bachelier_spec().dim
        if self.family == 'generic':
            node = _check_keys(self.data.get('generic', {}), '$.generic', {'dim'})
            return _integer(node.get('dim', 1), '$.generic.dim')
        return 1

    def command(self, name: str) -> Mapping[str, Any]:
        commands = self.data.get('commands', {})
        if name not in commands:
            raise ConfigError(f"no settings for command '{name}'", f"$.commands.{name}")
        return commands[name]

    def expr(self, node: Any, path: str) -> PayoffExpr:
        return parse_expr(node, path, self.dim, self.horizon)

    # --- モデル ---

    def _bachelier_node(self) -> Mapping[str, Any]:
        node = self.data.get('bachelier')
        return _check_keys(node, '$.bachelier', {'grid', 'n_steps', 'dim', 'f', 'g', 'psi', 'y'}, {'psi'})

    def bachelier_grid(self) -> TimeGrid:
        return _grid(self._bachelier_node(), '$.bachelier', self.horizon)

    def bachelier_spec(self, f: Any = None, g: Any = None, path: str = '$.bachelier') -> BachelierSpec:
        if self.family != 'bachelier':
            raise ConfigError("requires family 'bachelier'", '$.family')
        node = self._bachelier_node()
        grid = self.bachelier_grid()
        dim = _integer(node.get('dim', 1), '$.bachelier.dim')
        zero = [0.0] * dim
        f_node = f if f is not None else node.get('f', zero)
        g_node = g if g is not None else node.get('g', zero)
        try:
            return BachelierSpec(
                f=_step_function(f_node, f"{path}.f", grid, (dim,)),
                g=_step_function(g_node, f"{path}.g", grid, (dim,)),
                psi=_step_function(node['psi'], '$.bachelier.psi', grid, (dim, dim)),
                y=_step_function(node['y'], '$.bachelier.y', grid, (dim,)) if 'y' in node else None,
            )
        except ValueError as e:
            raise ConfigError(str(e), path) from e

    def digital_spec(self) -> DigitalSpec:
        if self.family != 'digital':
            raise ConfigError("requires family 'digital'", '$.family')
        return DigitalSpec(self.maker_gamma(), self.horizon)

    def twod_spec(self) -> TwoDDigitalSpec:
        node = _check_keys(self.data.get('twod', {}), '$.twod', {'t', 'b1', 'b2'})
        try:
            return TwoDDigitalSpec(
                self.horizon,
                _number(node.get('t', 0.0), '$.twod.t'),
                _number(node.get('b1', 0.0), '$.twod.b1'),
                _number(node.get('b2', 0.0), '$.twod.b2'),
            )
        except ValueError as e:
            raise ConfigError(str(e), '$.twod') from e

    def _maker_node(self) -> Mapping[str, Any]:
        return _check_keys(self.data.get('maker'), '$.maker', {'gamma', 'endowment', 'assets'}, {'gamma'})

    def maker_gamma(self) -> float:
        return _number(self._maker_node()['gamma'], '$.maker.gamma', positive=True)

    def investor_alpha(self) -> float:
        node = _check_keys(self.data.get('investor'), '$.investor', {'alpha', 'endowment'}, {'alpha'})
        return _number(node['alpha'], '$.investor.alpha', positive=True)

    def maker(self) -> MakerSpec:
        gamma = self.maker_gamma()
        node = self._maker_node()
        if self.family == 'bachelier':
            return self.bachelier_spec().maker(gamma)
        if self.family == 'digital':
            return self.digital_spec().maker()
        if self.family != 'generic':
            raise ConfigError("family has no market maker", '$.family')
        if 'assets' not in node:
            raise ConfigError("missing required field", '$.maker.assets')
        assets = tuple(
            self.expr(a, f"$.maker.assets[{i}]")
            for i, a in enumerate(_list(node['assets'], '$.maker.assets'))
        )
        endowment = self.expr(node.get('endowment', 0.0), '$.maker.endowment')
        return MakerSpec(gamma, assets, endowment)

    def investor(self) -> InvestorSpec:
        alpha = self.investor_alpha()
        node = self.data['investor']
        if self.family == 'bachelier' and 'endowment' not in node:
            return self.bachelier_spec().investor(alpha)
        return InvestorSpec(alpha, self.expr(node.get('endowment', 0.0), '$.investor.endowment'))

    def claim(self, maker: Optional[MakerSpec] = None) -> PayoffExpr:
        if 'claim' in self.data:
            return self.expr(self.data['claim'], '$.claim')
        if self.family == 'bachelier':
            try:
                return self.bachelier_spec().claim()
            except ValueError as e:
                raise ConfigError(str(e), '$.bachelier.y') from e
        if self.family == 'digital':
            return (maker or self.maker()).assets[0]
        raise ConfigError("missing required field", '$.claim')

    def h_provider(self) -> HProvider:
        if self.family == 'bachelier':
            return BachelierModel(self.bachelier_spec(), self.maker_gamma())
        if self.family == 'digital':
            return DigitalModel(self.digital_spec())
        raise ConfigError(f"family '{self.family}' has no closed-form H", '$.family')

    def claim_setup(self) -> ClaimSetup:
        maker = self.maker()
        return ClaimSetup(maker, self.investor(), self.claim(maker), self.engine.build())

    # --- コマンド別の構築 ---

    def demand_rule(self, node: Any, path: str) -> DemandRule:
        node = _check_keys(node, path, {'type', 'q', 'values'}, {'type'})
        kind = node['type']
        k = self.maker().k
        if kind == 'constant':
            q = _array(node.get('q', [0.0] * k), f"{path}.q").reshape(-1)
            if q.size != k:
                raise ConfigError(f"expected {k} components", f"{path}.q")
            return ConstantDemand(tuple(q))
        if kind == 'schedule':
            grid = self.bachelier_grid() if self.family == 'bachelier' else TimeGrid.uniform(self.horizon, 1)
            return ScheduleDemand(_step_function(node.get('values'), f"{path}.values", grid, (k,)))
        if kind == 'optimal':
            spec = self.bachelier_spec()
            strategy = bachelier_optimal_strategy(
                spec, spec.maker(self.maker_gamma()), self.investor()
            )
            return ScheduleDemand(strategy)
        raise ConfigError(f"unknown demand type {kind!r}", f"{path}.type")

    def quote_positions(self) -> List[np.ndarray]:
        path = '$.commands.quote.q'
        k = self.maker().k
        positions = []
        for i, q in enumerate(_list(self.command('quote').get('q'), path)):
            q = _array(q, f"{path}[{i}]").reshape(-1)
            if q.size != k:
                raise ConfigError(f"expected {k} components", f"{path}[{i}]")
            positions.append(q)
        return positions

    def bounds_sizes(self) -> List[float]:
        path = '$.commands.bounds.u'
        sizes = _float_list(self.command('bounds').get('u'), path)
        for i, u in enumerate(sizes):
            if u < 0:
                raise ConfigError("position sizes must be non-negative", f"{path}[{i}]")
        return sizes

    def bounds_prices(self) -> List[float]:
        node = self.command('bounds')
        if 'p' not in node:
            return []
        return _float_list(node['p'], '$.commands.bounds.p')

    def schedule_prices(self) -> List[float]:
        node = self.command('schedule')
        path = '$.commands.schedule'
        if ('p' in node) == ('p_range' in node):
            raise ConfigError("give exactly one of p or p_range", path)
        if 'p' in node:
            return _float_list(node['p'], f"{path}.p")
        spec = _check_keys(node['p_range'], f"{path}.p_range", {'start', 'stop', 'num'}, {'start', 'stop', 'num'})
        start = _number(spec['start'], f"{path}.p_range.start")
        stop = _number(spec['stop'], f"{path}.p_range.stop")
        num = _integer(spec['num'], f"{path}.p_range.num")
        return [float(p) for p in np.linspace(start, stop, num)]

    def region_params(self) -> Tuple[Tuple[float, float], Tuple[float, float], Tuple[int, int]]:
        node = self.command('region')
        path = '$.commands.region'
        spec = self.twod_spec()
        lo, hi = spec.p2_interval
        p1_range = _range(node.get('p1_range', [-2.0, 2.0]), f"{path}.p1_range")
        p2_range = _range(node.get('p2_range', [lo, hi]), f"{path}.p2_range")
        resolution = node.get('resolution', [101, 101])
        if not isinstance(resolution, list) or len(resolution) != 2:
            raise ConfigError("expected [n1, n2]", f"{path}.resolution")
        n1 = _integer(resolution[0], f"{path}.resolution[0]", minimum=2)
        n2 = _integer(resolution[1], f"{path}.resolution[1]", minimum=2)
        return p1_range, p2_range, (n1, n2)

    def simulate_params(self) -> Tuple[TimeGrid, int, DemandRule, Tuple[str, ...]]:
        """(grid, paths, demand, checks)"""
        node = self.command('simulate')
        path = '$.commands.simulate'
        grid = TimeGrid.uniform(self.horizon, _integer(node.get('n_steps', 256), f"{path}.n_steps"))
        paths = _integer(node.get('paths', 1000), f"{path}.paths")
        demand = self.demand_rule(node.get('demand', {'type': 'constant'}), f"{path}.demand")
        checks = node.get('checks', ['identity', 'budget'])
        if not isinstance(checks, list) or not set(checks) <= {'identity', 'budget'}:
            raise ConfigError("checks must be a list drawn from identity, budget", f"{path}.checks")
        return grid, paths, demand, tuple(checks)

    def pepq_require_witness(self) -> bool:
        value = self.command('pepq').get('require_witness', False)
        if not isinstance(value, bool):
            raise ConfigError("expected true or false", '$.commands.pepq.require_witness')
        return value

    def segmented_market(self) -> Tuple[SegmentedMarket, Optional[Tuple[BachelierParty, BachelierParty]]]:
        """pepq コマンドの市場（Bachelier の場合は閉形式用の当事者も返す）"""
        node = self.command('pepq')
        engine = self.engine.build()
        if self.family == 'bachelier':
            parties = []
            for side in ('a', 'b'):
                path = f"$.commands.pepq.{side}"
                side_node = _check_keys(node.get(side), path, {'gamma', 'alpha', 'f', 'g'}, {'gamma', 'alpha'})
                spec = self.bachelier_spec(side_node.get('f'), side_node.get('g'), path)
                parties.append(BachelierParty(
                    spec,
                    _number(side_node['gamma'], f"{path}.gamma", positive=True),
                    _number(side_node['alpha'], f"{path}.alpha", positive=True),
                ))
            claim = self.claim()
            setups = [
                ClaimSetup(p.spec.maker(p.gamma), p.spec.investor(p.alpha), claim, engine)
                for p in parties
            ]
            return SegmentedMarket(*setups), (parties[0], parties[1])
        claim = self.claim()
        setups = []
        for side in ('a', 'b'):
            path = f"$.commands.pepq.{side}"
            side_node = _check_keys(
                node.get(side), path,
                {'gamma', 'alpha', 'maker_endowment', 'investor_endowment'}, {'gamma', 'alpha'}
            )
            maker = MakerSpec(
                _number(side_node['gamma'], f"{path}.gamma", positive=True),
                (claim,),
                self.expr(side_node.get('maker_endowment', 0.0), f"{path}.maker_endowment"),
            )
            investor = InvestorSpec(
                _number(side_node['alpha'], f"{path}.alpha", positive=True),
                self.expr(side_node.get('investor_endowment', 0.0), f"{path}.investor_endowment"),
            )
            setups.append(ClaimSetup(maker, investor, claim, engine))
        return SegmentedMarket(*setups), None

    def asymptotic_plan(self) -> AsymptoticPlan:
        """
        asymptotics コマンドの実行計画

        large_claim: γ^B_n = 2^{-n}, γ^A_n = δγ^B_n、B は (ℓ/γ^B)h を保有
        many_makers: n 人のメイカー（γ/n, nΣ_0）
        demand_rate: β_n = 2^{-n} の単独市場
        """
        node = self.command('asymptotics')
        path = '$.commands.asymptotics'
        mode = node.get('mode')
        if mode not in ('large_claim', 'many_makers', 'demand_rate'):
            raise ConfigError("must be large_claim, many_makers or demand_rate", f"{path}.mode")
        ns = [_integer(n, f"{path}.ns[{i}]") for i, n in enumerate(_list(node.get('ns'), f"{path}.ns"))]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError("must be strictly increasing", f"{path}.ns")
        claim = self.claim()
        engine = self.engine.build()
        sigma_a = self.expr(node.get('sigma0_a', 0.0), f"{path}.sigma0_a")
        sigma_b = self.expr(node.get('sigma0_b', 0.0), f"{path}.sigma0_b")
        alpha_a = _number(node.get('alpha_a', 1.0), f"{path}.alpha_a", positive=True)
        alpha_b = _number(node.get('alpha_b', 1.0), f"{path}.alpha_b", positive=True)

        if mode == 'large_claim':
            ell = _number(node.get('ell', 1.0), f"{path}.ell")
            if ell == 0.0:
                raise ConfigError("must be non-zero", f"{path}.ell")
            delta = _number(node.get('delta', 1.0), f"{path}.delta", positive=True)

            def build_large_claim(n: int) -> SegmentedMarket:
                gamma_b = 2.0 ** (-n)
                gamma_a = delta * gamma_b
                side_a = ClaimSetup(
                    MakerSpec(gamma_a, (claim,), sigma_a), InvestorSpec(alpha_a), claim, engine
                )
                side_b = ClaimSetup(
                    MakerSpec(gamma_b, (claim,), sigma_b),
                    InvestorSpec(alpha_b, (ell / gamma_b) * claim),
                    claim, engine
                )
                return SegmentedMarket(side_a, side_b)

            return AsymptoticPlan(mode, tuple(ns), build_large_claim, gamma_sum_scale)

        if mode == 'many_makers':
            gamma_a = _number(node.get('gamma_a', 1.0), f"{path}.gamma_a", positive=True)
            gamma_b = _number(node.get('gamma_b', 1.0), f"{path}.gamma_b", positive=True)

            def build_many_makers(n: int) -> SegmentedMarket:
                side_a = ClaimSetup(
                    MakerSpec(gamma_a / n, (claim,), float(n) * sigma_a),
                    InvestorSpec(alpha_a), claim, engine
                )
                side_b = ClaimSetup(
                    MakerSpec(gamma_b / n, (claim,), float(n) * sigma_b),
                    InvestorSpec(alpha_b), claim, engine
                )
                return SegmentedMarket(side_a, side_b)

            return AsymptoticPlan(mode, tuple(ns), build_many_makers, per_maker_scale)

        price = _number(node.get('p', 0.0), f"{path}.p")

        def build_demand_rate(n: int) -> ClaimSetup:
            # α = γ = 2^{1-n} なら β = 2^{-n}
            risk = 2.0 ** (1 - n)
            return ClaimSetup(
                MakerSpec(risk, (claim,), sigma_a), InvestorSpec(risk, sigma_b), claim, engine
            )

        return AsymptoticPlan(mode, tuple(ns), build_demand_rate, price=price)


def load_scenario(path: Path) -> ScenarioConfig:
    """JSON シナリオを読み込んで検証する"""
    path = Path(path)
    try:
        with path.open(encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    logger.info(f"Loaded scenario config {path}")
    return ScenarioConfig.from_dict(data)


def canonical_json(data: Mapping[str, Any]) -> str:
    return json.dumps(data, sort_keys=True, separators=(',', ':'))
