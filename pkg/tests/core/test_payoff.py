import math

import numpy as np
import pytest

from src.core.errors import NumericOverflowError, UnsupportedExpressionError
from src.core.payoff import (
    Constant,
    ExpectationEngine,
    PathFunctional,
    StepFunction,
    StochasticIntegral,
    TerminalIndicator,
    TimeGrid,
    essential_range,
    estimate,
    evaluate_on_paths,
    expect,
    linear_combination,
    log_expect_exp,
    sample_paths,
    standard_normal,
    terminal_coordinate,
    tilted_expect,
)
from src.core.payoff.engine import gauss_hermite_rule


def test_time_grid_validation():
    """グリッドの検証"""
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.1, 1.0]))
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(ValueError):
        TimeGrid.uniform(1.0, 0)


def test_time_grid_union_and_coarsen():
    a = TimeGrid(np.array([0.0, 0.5, 1.0]))
    b = TimeGrid(np.array([0.0, 0.25, 1.0]))
    union = a.union(b)
    np.testing.assert_allclose(union.nodes, [0.0, 0.25, 0.5, 1.0])
    assert union.contains_nodes(a)
    assert union.contains_nodes(b)
    assert not a.contains_nodes(b)

    fine = TimeGrid.uniform(1.0, 8)
    np.testing.assert_allclose(fine.coarsen(2).nodes, np.linspace(0.0, 1.0, 5))
    with pytest.raises(ValueError):
        fine.coarsen(3)


def test_step_function_inner_on_different_grids():
    """異なるグリッド上の内積は共通細分で計算される"""
    a = StepFunction(TimeGrid(np.array([0.0, 0.5, 1.0])), np.array([[1.0], [2.0]]))
    b = StepFunction(TimeGrid(np.array([0.0, 0.25, 1.0])), np.array([[4.0], [1.0]]))
    # [0,0.25): 1*4, [0.25,0.5): 1*1, [0.5,1): 2*1
    assert a.inner(b) == pytest.approx(0.25 * 4 + 0.25 * 1 + 0.5 * 2)
    assert a.squared_norm() == pytest.approx(0.5 * 1 + 0.5 * 4)


def test_step_function_solve():
    grid = TimeGrid.uniform(1.0, 2)
    psi = StepFunction(grid, np.array([[[2.0]], [[4.0]]]))
    rhs = StepFunction.constant(grid, [8.0])
    np.testing.assert_allclose(psi.solve(rhs).values[:, 0], [4.0, 2.0])


def test_gauss_hermite_rule_normalised():
    points, weights = gauss_hermite_rule(16, 2)
    assert points.shape == (256, 2)
    assert weights.sum() == pytest.approx(1.0, abs=1e-13)
    # 2次モーメント
    assert np.dot(weights, points[:, 0] ** 2) == pytest.approx(1.0, abs=1e-12)


def test_expect_exponential_of_normal(quad, Z):
    """E[e^{-Z}] = e^{1/2}"""
    assert expect(quad, (-Z).exp()) == pytest.approx(math.exp(0.5), rel=1e-12)


def test_log_expect_exp(quad, Z):
    """log E[e^{-2Z}] = 2、大きなシフトでもオーバーフローしない"""
    assert log_expect_exp(quad, -2.0 * Z) == pytest.approx(2.0, abs=1e-10)
    assert log_expect_exp(quad, -Z + 700.0) == pytest.approx(700.5, abs=1e-9)


def test_tilted_expect(quad, Z):
    """E[Z e^{-Z}] / E[e^{-Z}] = -1"""
    assert tilted_expect(quad, Z, -Z) == pytest.approx(-1.0, abs=1e-10)


def test_tilted_expect_shortcuts(quad, Z):
    """定数の傾きは通常の期待値、定数の分子はそのまま返る"""
    assert tilted_expect(quad, Z * Z, Constant(3.0)) == pytest.approx(1.0, abs=1e-12)
    assert tilted_expect(quad, 2.5, Z) == 2.5


def test_constant_expression_is_exact(quad):
    assert expect(quad, Constant(1.25) * 4.0 - 1.0) == 4.0


def test_stochastic_integral_variance(quad):
    """∫φdB の分散は ∫|φ|²dt"""
    grid = TimeGrid(np.array([0.0, 0.5, 1.0]))
    x = StochasticIntegral(StepFunction(grid, np.array([[1.0], [2.0]])))
    assert x.variance == pytest.approx(2.5)
    assert expect(quad, x * x) == pytest.approx(2.5, rel=1e-12)


def test_correlated_leaves(quad):
    """B_T と ∫_0^{1/2} dB の共分散は 1/2"""
    grid = TimeGrid(np.array([0.0, 0.5, 1.0]))
    early = StochasticIntegral(StepFunction(grid, np.array([[1.0], [0.0]])))
    b_t = terminal_coordinate()
    assert expect(quad, early * b_t) == pytest.approx(0.5, abs=1e-12)
    assert expect(quad, (early - b_t) * (early - b_t)) == pytest.approx(0.5, abs=1e-12)


def test_linear_combination(quad):
    z1 = standard_normal(dim=2, index=0)
    z2 = standard_normal(dim=2, index=1)
    x = linear_combination([z1, z2], [3.0, 4.0])
    assert expect(quad, x * x) == pytest.approx(25.0, rel=1e-12)
    with pytest.raises(ValueError):
        linear_combination([z1], [1.0, 2.0])


def test_quadrature_rank_limit(quad):
    """因子の階数が上限を超えると求積は使えない"""
    x = linear_combination([standard_normal(dim=4, index=i) for i in range(4)], [1.0] * 4)
    with pytest.raises(UnsupportedExpressionError):
        expect(quad, x.exp())


def test_mixed_dimensions_rejected(quad):
    x = standard_normal(dim=1) + standard_normal(dim=2, index=1)
    with pytest.raises(UnsupportedExpressionError):
        expect(quad, x)


def test_digital_expectation(quad):
    """1_{B_T >= 0} の期待値は 1/2"""
    digital = TerminalIndicator(0, 0.0, 1.0, 1)
    assert expect(quad, digital) == pytest.approx(0.5, abs=1e-12)
    assert essential_range(quad, digital) == (0.0, 1.0)


def test_essential_range_unbounded(quad, Z):
    assert essential_range(quad, Z) == (-math.inf, math.inf)
    lo, hi = essential_range(quad, Z * 0.0 + 2.0)
    assert lo == hi == 2.0


def test_overflow_is_reported(quad, Z):
    with pytest.raises(NumericOverflowError):
        expect(quad, (1000.0 * Z).exp())


def test_monte_carlo_agrees_with_quadrature(mc, Z):
    """モンテカルロは標準誤差の範囲で正しい"""
    result = estimate(mc, (-Z).exp())
    assert result.stderr > 0
    assert abs(result.value - math.exp(0.5)) < 5 * result.stderr


def test_monte_carlo_is_reproducible(Z):
    """同じシードなら同じ結果、スレッド数には依存しない"""
    single = ExpectationEngine.monte_carlo(paths=40_000, seed=7, block_size=4096, threads=1)
    pooled = ExpectationEngine.monte_carlo(paths=40_000, seed=7, block_size=4096, threads=4)
    assert expect(single, Z * Z) == expect(pooled, Z * Z)
    other = ExpectationEngine.monte_carlo(paths=40_000, seed=8, block_size=4096, threads=1)
    assert expect(single, Z * Z) != expect(other, Z * Z)


def test_path_functional_requires_monte_carlo(quad, mc):
    grid = TimeGrid.uniform(1.0, 16)
    running_max = PathFunctional(lambda path: path[:, :, 0].max(axis=1), grid, 1, (0.0, math.inf))
    with pytest.raises(UnsupportedExpressionError):
        expect(quad, running_max)
    # 離散の最大値は連続の E[max B] = √(2/π) より小さい
    value = expect(mc, running_max)
    assert 0.6 < value < math.sqrt(2.0 / math.pi)


def test_path_functional_terminal_value(mc):
    grid = TimeGrid.uniform(1.0, 4)
    terminal = PathFunctional(lambda path: path[:, -1, 0], grid)
    result = estimate(mc, terminal * terminal)
    assert abs(result.value - 1.0) < 5 * result.stderr


def test_evaluate_on_paths():
    """与えた増分上での確率積分の評価"""
    grid = TimeGrid.uniform(1.0, 2)
    integral = StochasticIntegral(StepFunction(grid, np.array([[1.0], [3.0]])))
    increments = np.array([[[0.5], [-1.0]], [[2.0], [0.25]]])
    np.testing.assert_allclose(evaluate_on_paths(integral, grid, increments), [-2.5, 2.75])


def test_sample_paths_shape_and_variance():
    grid = TimeGrid(np.array([0.0, 0.25, 1.0]))
    increments = sample_paths(grid, 2, 50_000, seed=3)
    assert increments.shape == (50_000, 2, 2)
    np.testing.assert_allclose(increments.var(axis=0), [[0.25, 0.25], [0.75, 0.75]], rtol=0.05)
    np.testing.assert_array_equal(increments, sample_paths(grid, 2, 50_000, seed=3))


def test_exp_moment_of_gaussian(Z, quad):
    """E[e^{-Z + 0.5|Z|}] = e^{1/8}Φ(-1/2) + e^{9/8}Φ(3/2)"""
    cdf = lambda x: 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
    expected = math.log(math.exp(0.125) * cdf(-0.5) + math.exp(1.125) * cdf(1.5))
    samples = quad.prepare([Z])
    assert samples.check_exp_moment(-1.0 * Z, (Z,), 0.5) == pytest.approx(expected, rel=1e-2)


@pytest.mark.parametrize("engine_name", ["quad", "mc"])
def test_exp_moment_rejects_heavy_tail(Z, engine_name, request):
    """e^{Z²} は指数モーメントを持たない（標本上では単一の標本に支配される）"""
    engine = request.getfixturevalue(engine_name)
    heavy = (Z * Z).exp()
    samples = engine.prepare([heavy])
    with pytest.raises(NumericOverflowError, match="single"):
        samples.check_exp_moment(Constant(0.0), (heavy,), 0.5, "claim moment")


def test_exp_moment_skips_concentrated_base(Z, quad):
    """基準部分だけで集中している場合（e^{-1024Z}）は有限なら通す"""
    samples = quad.prepare([Z])
    assert math.isfinite(samples.check_exp_moment(-1024.0 * Z, (Z,), 0.5))
