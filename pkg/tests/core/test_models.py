import math

import numpy as np
import pytest

from src.core.maker import static_quote
from src.core.models import (
    BachelierModel,
    BachelierSpec,
    DigitalModel,
    DigitalSpec,
    TwoDDigitalSpec,
    bachelier_H,
    bachelier_position_for,
    digital_H,
    digital_constraint_interval,
    digital_value,
    region_raster,
    twod_region_membership,
)
from src.core.payoff import StepFunction, TimeGrid


def test_bachelier_H(bachelier_factory):
    """H_t(q) = -γ(f + ψq)"""
    spec = bachelier_factory(f=1.0)
    assert bachelier_H(spec, 0.0, [3.0], gamma=2.0)[0] == pytest.approx(-8.0)
    pi = bachelier_H(spec, 0.0, [3.0], gamma=2.0) - bachelier_H(spec, 0.0, [0.0], gamma=2.0)
    np.testing.assert_allclose(bachelier_position_for(spec, 0.0, pi, gamma=2.0), [3.0])


def test_bachelier_model_is_vectorised(bachelier_factory):
    spec = bachelier_factory(f=0.5, n_steps=4)
    model = BachelierModel(spec, 2.0)
    state = np.zeros((5, 1))
    q = np.linspace(-1.0, 1.0, 5).reshape(5, 1)
    np.testing.assert_allclose(model.H(0.3, state, q)[:, 0], -2.0 * (0.5 + q[:, 0]))


def test_bachelier_spec_validation():
    grid = TimeGrid.uniform(1.0, 2)
    psi = StepFunction(grid, np.array([[[1.0]], [[0.0]]]))
    zero = StepFunction.constant(grid, [0.0])
    with pytest.raises(ValueError):
        BachelierSpec(zero, zero, psi)
    other = StepFunction.constant(TimeGrid.uniform(2.0, 1), [0.0])
    with pytest.raises(ValueError):
        BachelierSpec(other, zero, StepFunction.constant(grid, [[1.0]]))


def test_bachelier_spec_builds_maker(bachelier_factory, quad):
    """Σ_0 = 0, Ψ = B_T のとき X(q) = γq²/2"""
    spec = bachelier_factory(f=0.0)
    assert static_quote(spec.maker(2.0), quad, [1.5]) == pytest.approx(2.25, abs=1e-10)


def test_digital_value_at_zero_position():
    spec = DigitalSpec(1.0)
    assert digital_value(spec, 0.0, 0.3, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_digital_constraint_interval_at_the_money():
    """b = 0 では (-√(2/π), √(2/π))"""
    lo, hi = digital_constraint_interval(DigitalSpec(1.0), 0.0, 0.0)
    assert lo == pytest.approx(-0.79788456, abs=1e-8)
    assert hi == pytest.approx(0.79788456, abs=1e-8)


def test_digital_H_matches_derivative():
    """H = -∂_b v（中心差分）"""
    spec = DigitalSpec(1.0)
    step = 1e-5
    for q in (-2.0, -0.5, 1.0, 4.0):
        fd = -(digital_value(spec, 0.0, 0.3 + step, q) - digital_value(spec, 0.0, 0.3 - step, q)) / (2 * step)
        assert digital_H(spec, 0.0, 0.3, q) == pytest.approx(fd, abs=1e-6)


def _random_states(seed: int, count: int = 100):
    """(t, b, q) を t ∈ [0, 0.9], b ∈ [-2, 2], q ∈ [-5, 5] から一様に引く"""
    rng = np.random.default_rng(seed)
    return zip(
        rng.uniform(0.0, 0.9, count),
        rng.uniform(-2.0, 2.0, count),
        rng.uniform(-5.0, 5.0, count),
    )


def test_digital_H_matches_derivative_random_states():
    """ランダムな (t, b, q) で H = -∂_b v（中心差分、刻みは √τ に比例）"""
    spec = DigitalSpec(1.0)
    for t, b, q in _random_states(2024):
        step = 1e-4 * math.sqrt(spec.horizon - t)
        fd = -(digital_value(spec, t, b + step, q) - digital_value(spec, t, b - step, q)) / (2 * step)
        assert abs(digital_H(spec, t, b, q) - fd) <= 1e-6, (t, b, q)


def test_digital_H_strictly_inside_constraint_random_states():
    """ランダムな (t, b, q) で H は K°_t の開区間に入る"""
    spec = DigitalSpec(1.0)
    for t, b, q in _random_states(2025):
        lo, hi = digital_constraint_interval(spec, t, b)
        assert lo < digital_H(spec, t, b, q) < hi, (t, b, q)


def test_digital_H_decreasing_and_inside():
    """H は q について狭義単調減少で、大きな |q| でも区間の内側にある"""
    spec = DigitalSpec(1.0)
    qs = np.linspace(-10.0, 10.0, 41)
    h = digital_H(spec, 0.0, 0.0, qs)
    assert np.all(np.diff(h) < 0)
    lo, hi = digital_constraint_interval(spec, 0.0, 0.0)
    assert lo < digital_H(spec, 0.0, 0.0, 10.0) < 0.0
    assert 0.0 < digital_H(spec, 0.0, 0.0, -10.0) < hi
    assert digital_H(spec, 0.0, 0.0, 0.0) == 0.0


def test_digital_H_far_from_the_money():
    """|b| が大きくてもオーバーフローしない"""
    spec = DigitalSpec(2.0)
    values = digital_H(spec, 0.5, np.array([-12.0, 12.0]), np.array([3.0, -3.0]))
    assert np.all(np.isfinite(values))


def test_digital_needs_time_before_horizon():
    spec = DigitalSpec(1.0, horizon=1.0)
    with pytest.raises(ValueError):
        digital_H(spec, 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        DigitalSpec(0.0)


def test_digital_model_shapes():
    model = DigitalModel(DigitalSpec(1.0))
    state = np.array([[0.0], [0.5], [-0.5]])
    q = np.ones((3, 1))
    out = model.H(0.25, state, q)
    assert out.shape == (3, 1)
    assert np.all(out < 0)


@pytest.fixture
def twod():
    return TwoDDigitalSpec(horizon=1.0, t=0.0, b1=0.0, b2=0.0)


def test_twod_p2_interval(twod):
    lo, hi = twod.p2_interval
    assert lo == pytest.approx(-0.79788456, abs=1e-8)
    assert hi == pytest.approx(0.79788456, abs=1e-8)


def test_twod_membership(twod):
    """p_2 = 0 は任意の p_1 で所属、区間外は所属しない"""
    assert twod_region_membership(twod, 0.0, 0.0)
    assert twod_region_membership(twod, 2.5, 0.0)
    assert not twod_region_membership(twod, 0.0, 0.9)
    singular = twod_region_membership(twod, 0.0, twod.p2_interval[1])
    assert not singular.inside
    assert singular.at_singularity
    # 上端付近では |p_1| が大きい点だけが所属する
    assert not twod_region_membership(twod, 0.0, 0.7)
    assert twod_region_membership(twod, 2.5, 0.7)


def test_twod_spec_validation():
    with pytest.raises(ValueError):
        TwoDDigitalSpec(horizon=1.0, t=1.0)
    with pytest.raises(ValueError):
        TwoDDigitalSpec(b1=math.inf)


def test_region_raster_is_not_convex(twod):
    raster = region_raster(twod, (-3.0, 3.0), twod.p2_interval, (121, 121))
    assert raster.inside.shape == (121, 121)
    # 端の行は開区間の外
    assert not raster.inside[0].any()
    assert not raster.inside[-1].any()
    np.testing.assert_array_equal(raster.inside, raster.inside[:, ::-1])
    triple = raster.nonconvex_triple()
    assert triple is not None
    (left, p2), (mid, p2_mid), (right, p2_right) = triple
    assert p2 == p2_mid == p2_right
    assert left < mid < right
    assert twod_region_membership(twod, left, p2)
    assert not twod_region_membership(twod, mid, p2)
    assert twod_region_membership(twod, right, p2)


def test_region_raster_rows(twod):
    raster = region_raster(twod, (-1.0, 1.0), (-0.5, 0.5), (3, 3))
    rows = raster.rows()
    assert len(rows) == 9
    assert rows[4] == (0.0, 0.0, True)
    with pytest.raises(ValueError):
        region_raster(twod, (-1.0, 1.0), (-0.5, 0.5), (1, 3))
