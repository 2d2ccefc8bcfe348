import math

import pytest

from src.main import build_parser, main, run
from src.utils.reporting import file_hash, load_manifest


def _run(command, config, out_dir, *extra):
    return run([command, "--config", str(config), "--out", str(out_dir), *extra])


def test_parser_lists_commands():
    parser = build_parser()
    args = parser.parse_args(["quote", "--config", "x.json", "--engine", "mc", "--paths", "10"])
    assert args.command == "quote"
    assert args.paths == 10
    with pytest.raises(SystemExit):
        parser.parse_args(["quote", "--config", "x.json", "--engine", "sobol"])


def test_quote_gaussian(scenario, temp_dir, read_table):
    """X(q) = q²/2（γ = 1）"""
    assert _run("quote", scenario("quote_gaussian"), temp_dir) == 0
    rows = read_table(temp_dir / "quote.csv")
    assert [float(r["q_1"]) for r in rows] == [0.0, 1.0, -1.0, 2.0]
    quotes = [float(r["quote"]) for r in rows]
    assert quotes == pytest.approx([0.0, 0.5, 0.5, 2.0], abs=1e-10)


def test_quote_digital(scenario, temp_dir, read_table):
    assert _run("quote", scenario("quote_digital"), temp_dir) == 0
    rows = read_table(temp_dir / "quote.csv")
    for row in rows:
        q = float(row["q_1"])
        expected = math.log(0.5 * math.exp(-q) + 0.5)
        assert float(row["quote"]) == pytest.approx(expected, abs=1e-10)


def test_bounds_bachelier(scenario, temp_dir, read_table):
    assert _run("bounds", scenario("bounds_bachelier"), temp_dir) == 0
    rows = read_table(temp_dir / "bounds.csv")
    assert len(rows) == 4 * 3
    # u = 0 では上下限が E_0[h] に一致する
    for row in rows[:3]:
        assert float(row["u"]) == 0.0
        assert float(row["lower"]) == pytest.approx(-2.0, abs=1e-9)
        assert float(row["upper"]) == pytest.approx(-2.0, abs=1e-9)
    at_one = {float(r["p"]): r for r in rows if float(r["u"]) == 1.0}
    assert float(at_one[0.0]["upper"]) == pytest.approx(-1.0, abs=1e-9)
    assert float(at_one[0.0]["lower"]) == pytest.approx(-3.0, abs=1e-9)
    assert at_one[0.0]["classification"] == "sell_arbitrage"
    assert float(at_one[0.0]["arbitrage_gain"]) == pytest.approx(1.0, abs=1e-9)
    assert at_one[-2.0]["classification"] == "arbitrage_free"
    assert at_one[-4.0]["classification"] == "buy_arbitrage"


def test_schedule_bachelier(scenario, temp_dir, read_table):
    """û(p) = -(p + 1)、p = 0 で厳密な裁定"""
    assert _run("schedule", scenario("schedule_bachelier"), temp_dir) == 0
    rows = read_table(temp_dir / "schedule.csv")
    assert len(rows) == 9
    for row in rows:
        p = float(row["p"])
        assert float(row["u_hat"]) == pytest.approx(-(p + 1.0), abs=1e-8)
        assert float(row["closed_form"]) == pytest.approx(-(p + 1.0), abs=1e-12)
        assert row["exact_arbitrage"] == ("true" if p == 0.0 else "false")


def test_pepq_bachelier(scenario, temp_dir, read_table):
    assert _run("pepq", scenario("pepq_bachelier"), temp_dir) == 0
    row = read_table(temp_dir / "pepq.csv")[0]
    assert float(row["u_star"]) == pytest.approx(1.0, abs=1e-8)
    assert float(row["p_star"]) == pytest.approx(-1.0, abs=1e-8)
    assert float(row["closed_form_u_star"]) == pytest.approx(1.0)
    assert float(row["closed_form_p_star"]) == pytest.approx(-1.0)
    assert row["witness_holds"] == "true"
    sides = read_table(temp_dir / "pepq_arbitrage.csv")
    assert [s["side"] for s in sides] == ["A", "B"]


def test_pepq_with_arbitrage_on_both_sides(scenario, temp_dir, read_table):
    """均衡価格が両市場で裁定になる例"""
    assert _run("pepq", scenario("pepq_arbitrage"), temp_dir) == 0
    sides = read_table(temp_dir / "pepq_arbitrage.csv")
    for side in sides:
        assert side["classification"] != "arbitrage_free"
        assert float(side["arbitrage_gain"]) > 0.0


def test_region_twod(scenario, temp_dir, read_table):
    assert _run("region", scenario("region_twod"), temp_dir) == 0
    rows = read_table(temp_dir / "region.csv")
    assert len(rows) == 121 * 121
    # p_2 = 0 の行（中央）はすべて所属
    middle = rows[60 * 121:61 * 121]
    assert all(r["in_region"] == "true" for r in middle)
    assert {r["in_region"] for r in rows} == {"true", "false"}


def test_simulate_bachelier(scenario, temp_dir, read_table):
    assert _run("simulate", scenario("simulate_bachelier"), temp_dir) == 0
    rows = {r["check"]: r for r in read_table(temp_dir / "simulate.csv")}
    assert set(rows) == {
        "terminal_gains_mean", "identity_coarse", "identity_fine", "budget", "budget_dt_bias"
    }
    assert int(rows["identity_coarse"]["n_steps"]) == 128
    assert int(rows["identity_fine"]["n_steps"]) == 256
    assert float(rows["identity_fine"]["reference"]) <= 0.6
    assert rows["budget"]["holds"] == "true"


@pytest.mark.parametrize("name, limit", [
    ("asymptotics_large_claim", 1.0),
    ("asymptotics_many_makers", -0.5),
])
def test_pepq_asymptotics(scenario, temp_dir, read_table, name, limit):
    assert _run("asymptotics", scenario(name), temp_dir) == 0
    rows = read_table(temp_dir / "asymptotics.csv")
    for row in rows:
        assert row["error"] == ""
        assert float(row["scaled"]) == pytest.approx(limit, abs=1e-6)
    summary = read_table(temp_dir / "asymptotics_limit.csv")[0]
    assert summary["converged"] == "true"
    assert float(summary["limit"]) == pytest.approx(limit, abs=1e-6)


def test_demand_rate_asymptotics(scenario, temp_dir, read_table):
    """û_n·β_n → ℓ = -1/2（p = 1/2）"""
    assert _run("asymptotics", scenario("asymptotics_demand_rate"), temp_dir) == 0
    rows = read_table(temp_dir / "asymptotics.csv")
    assert [int(r["n"]) for r in rows] == [1, 2, 4, 8, 12]
    for row in rows:
        assert float(row["scaled"]) == pytest.approx(-0.5, abs=1e-6)
        assert float(row["ell"]) == pytest.approx(-0.5, abs=1e-8)


def test_runs_are_byte_identical(scenario, temp_dir):
    """同じ設定・シードなら CSV はバイト単位で一致する"""
    first, second = temp_dir / "first", temp_dir / "second"
    for out_dir in (first, second):
        assert _run("bounds", scenario("bounds_bachelier"), out_dir,
                    "--engine", "mc", "--paths", "20000", "--seed", "3") == 0
    assert (first / "bounds.csv").read_bytes() == (second / "bounds.csv").read_bytes()


def test_seed_changes_monte_carlo_output(scenario, temp_dir):
    for seed in ("3", "4"):
        assert _run("bounds", scenario("bounds_bachelier"), temp_dir / seed,
                    "--engine", "mc", "--paths", "20000", "--seed", seed) == 0
    assert (temp_dir / "3" / "bounds.csv").read_bytes() != (temp_dir / "4" / "bounds.csv").read_bytes()


def test_manifest_records_outputs(scenario, temp_dir):
    assert _run("quote", scenario("quote_gaussian"), temp_dir, "--seed", "17") == 0
    manifest = load_manifest(temp_dir / "quote_manifest.json")
    assert manifest.command == "quote"
    assert manifest.config_name == "quote_gaussian"
    assert manifest.seed == 17
    assert manifest.outputs == {"quote.csv": file_hash(temp_dir / "quote.csv")}
    assert manifest.wall_clock_seconds >= 0.0


def test_main_exit_codes(scenario, temp_dir, write_scenario):
    """正常終了は 0、設定エラーは 2"""
    with pytest.raises(SystemExit) as excinfo:
        main(["quote", "--config", str(scenario("quote_gaussian")), "--out", str(temp_dir)])
    assert excinfo.value.code == 0

    with pytest.raises(SystemExit) as excinfo:
        main(["quote", "--config", str(temp_dir / "missing.json")])
    assert excinfo.value.code == 2

    bad = write_scenario({"family": "generic", "unexpected": 1})
    with pytest.raises(SystemExit) as excinfo:
        main(["quote", "--config", str(bad), "--out", str(temp_dir)])
    assert excinfo.value.code == 2

    with pytest.raises(SystemExit) as excinfo:
        main(["quote", "--config", str(scenario("quote_gaussian")), "--paths", "0"])
    assert excinfo.value.code == 2


def test_solver_failure_exit_code(temp_dir, write_scenario):
    """有界な請求権の範囲外の価格では需要が有限にならない（終了コード 3）"""
    config = write_scenario({
        "name": "digital_schedule",
        "family": "digital",
        "maker": {"gamma": 1.0},
        "investor": {"alpha": 1.0},
        "commands": {"schedule": {"p": [0.5, 1.5]}},
    })
    with pytest.raises(SystemExit) as excinfo:
        main(["schedule", "--config", str(config), "--out", str(temp_dir / "out")])
    assert excinfo.value.code == 3
