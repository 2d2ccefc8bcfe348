import pytest
from pathlib import Path
import tempfile

from src.core.models import BachelierSpec
from src.core.payoff import ExpectationEngine, StepFunction, TimeGrid, standard_normal

@pytest.fixture
def temp_dir():
    """一時ディレクトリを提供するフィクスチャ"""
    with tempfile.TemporaryDirectory() as tmp_dir:
        yield Path(tmp_dir)

@pytest.fixture
def quad():
    """求積法エンジン（64ノード）"""
    return ExpectationEngine.quadrature(nodes=64)

@pytest.fixture
def mc():
    """モンテカルロエンジン（固定シード）"""
    return ExpectationEngine.monte_carlo(paths=200_000, seed=12345)

@pytest.fixture
def Z():
    """標準正規 Z = B_T/√T"""
    return standard_normal()

@pytest.fixture
def unit_grid():
    return TimeGrid.uniform(1.0, 1)

def make_bachelier(f=0.0, g=0.0, psi=1.0, y=1.0, n_steps=1, horizon=1.0) -> BachelierSpec:
    """1次元の定数係数 Bachelier モデル"""
    grid = TimeGrid.uniform(horizon, n_steps)
    return BachelierSpec(
        f=StepFunction.constant(grid, [f]),
        g=StepFunction.constant(grid, [g]),
        psi=StepFunction.constant(grid, [[psi]]),
        y=StepFunction.constant(grid, [y]) if y is not None else None,
    )

@pytest.fixture
def bachelier_factory():
    """Bachelier モデルを作る関数"""
    return make_bachelier
