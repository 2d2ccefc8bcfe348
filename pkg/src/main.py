import argparse
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional

from rich.console import Console
from rich.table import Table

from config.settings import (
    CLASSIFY_REL_TOL,
    DEBUG,
    OUTPUT_DIR,
    SOLVER,
)
from src.core.equilibrium import (
    bachelier_pepq,
    demand_rate,
    demand_rate_convergence,
    equilibrium_arbitrage,
    pepq_asymptotics,
    solve_pepq,
)
from src.core.errors import ConfigError, ImpactPricerError
from src.core.maker import (
    budget_constraint_check,
    simulate_gains,
    static_quote,
    wealth_identity_convergence,
)
from src.core.models import region_raster
from src.core.pricing import (
    arbitrage_gain,
    bachelier_demand,
    classify_price,
    demand_schedule,
    price_bounds,
    strong_classify,
)
from src.core.scenario import ScenarioConfig, load_scenario
from src.utils.logger import logger, set_console_level
from src.utils.reporting import RunManifest, config_hash, write_csv

console = Console(stderr=True)

Command = Callable[[ScenarioConfig, Path], List[Path]]


def cmd_quote(config: ScenarioConfig, out_dir: Path) -> List[Path]:
    """静的な提示価格 X(q)"""
    maker = config.maker()
    engine = config.engine.build()
    header = [f"q_{j + 1}" for j in range(maker.k)] + ['quote']
    rows = []
    for q in config.quote_positions():
        rows.append(list(q) + [static_quote(maker, engine, q)])

    table = Table(title=f"Static quotes ({config.name})")
    for column in header:
        table.add_column(column, justify="right")
    for row in rows:
        table.add_row(*[f"{v:.10g}" for v in row])
    console.print(table)
    return [write_csv(out_dir / 'quote.csv', header, rows)]


def cmd_bounds(config: ScenarioConfig, out_dir: Path) -> List[Path]:
    """無裁定価格帯と価格の分類"""
    setup = config.claim_setup()
    prices = config.bounds_prices()
    header = ['u', 'lower', 'q0_price', 'upper', 'p', 'classification', 'arbitrage_gain']
    rows = []
    for u in config.bounds_sizes():
        bounds = price_bounds(setup, u)
        base = [bounds.u, bounds.lower, bounds.q0_price, bounds.upper]
        if not prices:
            rows.append(base + [None, None, None])
        for p in prices:
            rows.append(base + [p, classify_price(setup, p, u), arbitrage_gain(setup, p, u)])

    for p in prices:
        if strong_classify(setup, p):
            console.print(f"p = {p:.10g} is strongly arbitrage-free (equals E_0[h])")
    console.print(f"Bounds table: {len(rows)} rows, E_0[h] = {rows[0][2]:.10g}")
    return [write_csv(out_dir / 'bounds.csv', header, rows)]


def cmd_schedule(config: ScenarioConfig, out_dir: Path) -> List[Path]:
    """需要スケジュール û(p)"""
    setup = config.claim_setup()
    spec = config.bachelier_spec() if config.family == 'bachelier' else None
    points = demand_schedule(setup, config.schedule_prices(), spec, progress=True)
    header = ['p', 'u_hat', 'residual', 'exact_arbitrage', 'closed_form']
    rows = []
    for point in points:
        closed = bachelier_demand(spec, setup.beta, point.p) if spec is not None else None
        rows.append([point.p, point.u_hat, point.residual, point.exact_arbitrage, closed])
    flagged = sum(1 for point in points if point.exact_arbitrage)
    console.print(f"Demand schedule: {len(points)} prices, {flagged} exact-arbitrage points")
    return [write_csv(out_dir / 'schedule.csv', header, rows)]


def cmd_pepq(config: ScenarioConfig, out_dir: Path) -> List[Path]:
    """部分均衡の価格・数量と均衡での裁定"""
    market, parties = config.segmented_market()
    result = solve_pepq(market, require_witness=config.pepq_require_witness())
    closed = bachelier_pepq(*parties) if parties is not None else None
    header = [
        'u_star', 'p_star', 'residual_a', 'residual_b', 'witness_holds',
        'closed_form_u_star', 'closed_form_p_star'
    ]
    rows = [[
        result.u_star, result.p_star, result.residual_a, result.residual_b, result.witness_holds,
        closed.u_star if closed else None, closed.p_star if closed else None
    ]]
    outputs = [write_csv(out_dir / 'pepq.csv', header, rows)]

    size = abs(result.u_star)
    report_rows = []
    for report in equilibrium_arbitrage(market, result):
        setup = market.side_a if report.side == 'A' else market.side_b
        bounds = price_bounds(setup, size)
        report_rows.append([
            report.side, size, bounds.lower, bounds.upper, report.classification, report.arbitrage_gain
        ])
        if report.arbitrage_gain > 0:
            console.print(
                f"[bold]Side {report.side}:[/bold] the equilibrium price {result.p_star:.10g} is a "
                f"{report.classification.value} at size {size:.10g}; riskless gain {report.arbitrage_gain:.10g}"
            )
        else:
            console.print(f"Side {report.side}: equilibrium price is arbitrage-free at size {size:.10g}")
    outputs.append(write_csv(
        out_dir / 'pepq_arbitrage.csv',
        ['side', 'size', 'lower', 'upper', 'classification', 'arbitrage_gain'],
        report_rows
    ))
    console.print(f"PEPQ: u* = {result.u_star:.10g}, p* = {result.p_star:.10g}")
    return outputs


def cmd_region(config: ScenarioConfig, out_dir: Path) -> List[Path]:
    """2次元デジタル請求権の K°_t ラスター"""
    spec = config.twod_spec()
    p1_range, p2_range, resolution = config.region_params()
    raster = region_raster(spec, p1_range, p2_range, resolution)
    triple = raster.nonconvex_triple()
    if triple is not None:
        console.print(f"Non-convexity witness: {triple}")
    else:
        console.print("No non-convexity witness on this raster")
    return [write_csv(out_dir / 'region.csv', ['p1', 'p2', 'in_region'], raster.rows())]


def cmd_simulate(config: ScenarioConfig, out_dir: Path) -> List[Path]:
    """利得過程のシミュレーションと富の対応・予算制約の検証"""
    maker = config.maker()
    provider = config.h_provider()
    grid, paths, demand, checks = config.simulate_params()
    seed = config.engine.seed
    header = ['check', 'n_steps', 'paths', 'value', 'stderr', 'reference', 'holds']
    rows = []

    simulation = simulate_gains(maker, provider, grid, demand, paths, seed)
    terminal = simulation.terminal[simulation.valid]
    stderr = float(terminal.std(ddof=1) / terminal.size ** 0.5) if terminal.size > 1 else 0.0
    rows.append(['terminal_gains_mean', grid.n_steps, int(terminal.size), float(terminal.mean()), stderr, None, None])

    if 'identity' in checks:
        if grid.n_steps % 2:
            raise ConfigError("identity check needs an even n_steps", '$.commands.simulate.n_steps')
        convergence = wealth_identity_convergence(
            maker, provider, grid.horizon, demand, grid.n_steps // 2, paths, seed
        )
        rows.append(['identity_coarse', grid.n_steps // 2, paths, convergence.coarse, None, None, None])
        rows.append(['identity_fine', grid.n_steps, paths, convergence.fine, None, convergence.ratio, None])
    if 'budget' in checks:
        budget = budget_constraint_check(maker, provider, grid, demand, paths, seed)
        rows.append(['budget', grid.n_steps, budget.paths, budget.mean, budget.stderr, 1.0, budget.holds()])
        rows.append(['budget_dt_bias', grid.n_steps, budget.paths, budget.dt_bias, None, None, None])

    table = Table(title=f"Simulation checks ({config.name})")
    for column in ('check', 'value', 'holds'):
        table.add_column(column)
    for row in rows:
        table.add_row(str(row[0]), f"{row[3]:.6g}", "" if row[6] is None else str(row[6]))
    console.print(table)
    return [write_csv(out_dir / 'simulate.csv', header, rows)]


def cmd_asymptotics(config: ScenarioConfig, out_dir: Path) -> List[Path]:
    """大きな請求権・多数のメイカー・需要の増加率"""
    plan = config.asymptotic_plan()
    if plan.mode == 'demand_rate':
        points = demand_rate_convergence(plan.builder, plan.price, plan.ns)
        setup = plan.builder(plan.ns[0])
        rate = demand_rate(setup.engine, setup.claim, plan.price)
        rows = [[p.n, p.beta, p.u_hat, p.scaled, rate.ell] for p in points]
        console.print(f"Demand rate at p = {plan.price:.10g}: ell = {rate.ell:.10g}")
        return [write_csv(
            out_dir / 'asymptotics.csv', ['n', 'beta', 'u_hat', 'scaled', 'ell'], rows
        )]

    schedule = pepq_asymptotics(plan.builder, plan.ns, plan.scale, progress=True)
    header = ['n', 'beta_a', 'beta_b', 'gamma_a', 'gamma_b', 'u_star', 'p_star', 'scaled', 'error']
    rows = [
        [p.n, p.beta_a, p.beta_b, p.gamma_a, p.gamma_b, p.u_star, p.p_star, p.scaled, p.error]
        for p in schedule.points
    ]
    outputs = [write_csv(out_dir / 'asymptotics.csv', header, rows)]
    outputs.append(write_csv(
        out_dir / 'asymptotics_limit.csv',
        ['mode', 'limit', 'converged'],
        [[plan.mode, schedule.limit, schedule.converged]]
    ))
    if schedule.converged:
        console.print(f"Scaled quantity converges to {schedule.limit:.10g}")
    else:
        console.print("[yellow]No limit detected along the schedule[/yellow]")
    return outputs


COMMANDS: Dict[str, Command] = {
    'quote': cmd_quote,
    'bounds': cmd_bounds,
    'schedule': cmd_schedule,
    'pepq': cmd_pepq,
    'region': cmd_region,
    'simulate': cmd_simulate,
    'asymptotics': cmd_asymptotics,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Inventory-based price impact engine for CARA market makers"
    )
    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    helps = {
        'quote': 'Static quotes X(q) of the market maker',
        'bounds': 'No-arbitrage price bounds and price classification',
        'schedule': 'Investor demand schedule over a price grid',
        'pepq': 'Partial-equilibrium price and quantity of a segmented market',
        'region': 'Raster of the no-arbitrage region for the two-dimensional digital claim',
        'simulate': 'Gains process simulation with wealth-identity and budget checks',
        'asymptotics': 'Large-claim, many-maker and demand-rate schedules',
    }
    for name, text in helps.items():
        sub = subparsers.add_parser(name, help=text)
        sub.add_argument('--config', required=True, type=Path, help='Scenario config (JSON)')
        sub.add_argument('--out', type=Path, help='Output directory')
        sub.add_argument('--seed', type=int, help='Override the engine seed')
        sub.add_argument('--engine', choices=['quadrature', 'mc'], help='Expectation engine')
        sub.add_argument('--paths', type=int, help='Monte-Carlo paths')
        sub.add_argument('--nodes', type=int, help='Quadrature nodes per dimension')
        sub.add_argument('--tol', type=float, help='Absolute solver tolerance')
        sub.add_argument('-v', '--verbose', action='store_true', help='Show info logs on stderr')
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """コマンドを実行して終了コードを返す"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 1

    if args.verbose:
        set_console_level('INFO')

    for flag in ('paths', 'nodes'):
        value = getattr(args, flag)
        if value is not None and value < 1:
            raise ConfigError(f"--{flag} must be positive", f"--{flag}")
    if args.tol is not None and not args.tol > 0:
        raise ConfigError("--tol must be positive", "--tol")
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed must be non-negative", "--seed")

    config = load_scenario(args.config).with_engine(
        method=args.engine, paths=args.paths, nodes=args.nodes, seed=args.seed, abs_tol=args.tol
    )
    out_dir = args.out or (OUTPUT_DIR / config.name)
    logger.info(f"Running {args.command} for scenario '{config.name}' into {out_dir}")

    manifest = RunManifest(
        command=args.command,
        config_name=config.name,
        config_hash=config_hash(config.data),
        seed=config.engine.seed,
        engine={
            'method': config.engine.method,
            'nodes': config.engine.nodes,
            'paths': config.engine.paths,
        },
        tolerances={
            'abs_tol': config.engine.abs_tol,
            'classify_rel_tol': CLASSIFY_REL_TOL,
            'bracket_cap': SOLVER['bracket_cap'],
        },
    )
    start = time.perf_counter()
    outputs = COMMANDS[args.command](config, Path(out_dir))
    manifest.wall_clock_seconds = time.perf_counter() - start
    for path in outputs:
        manifest.add_output(path)
    manifest.save(Path(out_dir) / f"{args.command}_manifest.json")
    return 0


def main(argv: Optional[List[str]] = None) -> None:
    """メイン処理"""
    try:
        code = run(argv)
    except KeyboardInterrupt:
        print("\nOperation cancelled by user", file=sys.stderr)
        sys.exit(130)
    except ImpactPricerError as e:
        logger.error(f"{e.code}: {e}")
        console.print(f"[red]error[/red] {e.code}: {e}")
        if DEBUG:
            raise
        sys.exit(e.exit_code)
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        if DEBUG:
            raise
        sys.exit(1)
    sys.exit(code)


if __name__ == '__main__':
    main()
