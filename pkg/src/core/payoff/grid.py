from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

ArrayLike = Union[float, Sequence[float], np.ndarray]

_NODE_TOL = 1e-12


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """時間グリッド 0 = t_0 < ... < t_n = T"""
    nodes: np.ndarray

    def __post_init__(self):
        nodes = _readonly(self.nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("TimeGrid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError(f"TimeGrid must start at 0, got {nodes[0]}")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("TimeGrid nodes must be strictly increasing")
        object.__setattr__(self, 'nodes', nodes)

    @classmethod
    def uniform(cls, horizon: float, n_steps: int) -> 'TimeGrid':
        """等間隔グリッドを作成"""
        if horizon <= 0:
            raise ValueError(f"Horizon must be positive, got {horizon}")
        if n_steps < 1:
            raise ValueError(f"n_steps must be positive, got {n_steps}")
        return cls(np.linspace(0.0, horizon, n_steps + 1))

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    def interval_index(self, t: ArrayLike) -> np.ndarray:
        """t を含む区間 [t_j, t_{j+1}) の添字（t = T は最終区間）"""
        idx = np.searchsorted(self.nodes, np.asarray(t, dtype=float), side='right') - 1
        return np.clip(idx, 0, self.n_steps - 1)

    def union(self, other: 'TimeGrid') -> 'TimeGrid':
        """二つのグリッドの節点を合わせた細分グリッド"""
        merged = np.union1d(self.nodes, other.nodes)
        keep = np.concatenate(([True], np.diff(merged) > _NODE_TOL * max(merged[-1], 1.0)))
        return TimeGrid(merged[keep])

    def contains_nodes(self, other: 'TimeGrid') -> bool:
        """other の節点がすべて self の節点に含まれるか"""
        if other.horizon > self.horizon * (1 + _NODE_TOL):
            return False
        idx = np.searchsorted(self.nodes, other.nodes)
        idx = np.clip(idx, 0, self.nodes.size - 1)
        lower = np.clip(idx - 1, 0, self.nodes.size - 1)
        gap = np.minimum(
            np.abs(self.nodes[idx] - other.nodes),
            np.abs(self.nodes[lower] - other.nodes)
        )
        return bool(np.all(gap <= _NODE_TOL * max(self.horizon, 1.0)))

    def coarsen(self, factor: int) -> 'TimeGrid':
        """factor 個ごとに節点を間引いたグリッド"""
        if factor < 1 or self.n_steps % factor != 0:
            raise ValueError(
                f"Cannot coarsen {self.n_steps} steps by factor {factor}"
            )
        return TimeGrid(self.nodes[::factor])

    def __repr__(self) -> str:
        return f"TimeGrid(horizon={self.horizon}, n_steps={self.n_steps})"


@dataclass(frozen=True, eq=False)
class StepFunction:
    """区間ごとに一定のベクトル／行列値関数"""
    grid: TimeGrid
    values: np.ndarray  # shape (n_steps, *block_shape)

    def __post_init__(self):
        values = _readonly(self.values)
        if values.ndim == 1:
            values = _readonly(values.reshape(-1, 1))
        if values.shape[0] != self.grid.n_steps:
            raise ValueError(
                f"Expected {self.grid.n_steps} value blocks, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("StepFunction values must be finite")
        object.__setattr__(self, 'values', values)

    @classmethod
    def constant(cls, grid: TimeGrid, value: ArrayLike) -> 'StepFunction':
        """全区間で同じ値を取る関数"""
        block = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.broadcast_to(block, (grid.n_steps,) + block.shape).copy())

    @classmethod
    def from_callable(
        cls,
        grid: TimeGrid,
        func: Callable[[float], ArrayLike]
    ) -> 'StepFunction':
        """各区間の左端で func を評価して作成"""
        blocks = [np.atleast_1d(np.asarray(func(t), dtype=float)) for t in grid.nodes[:-1]]
        return cls(grid, np.stack(blocks))

    @property
    def block_shape(self) -> tuple:
        return self.values.shape[1:]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def at(self, t: ArrayLike) -> np.ndarray:
        """時刻 t での値ブロック"""
        return self.values[self.grid.interval_index(t)]

    def refine(self, grid: TimeGrid) -> 'StepFunction':
        """より細かいグリッド上に値を写す（区間中点で参照）"""
        if grid is self.grid:
            return self
        idx = self.grid.interval_index(grid.midpoints)
        inside = grid.midpoints < self.grid.horizon
        values = self.values[idx] * inside.reshape((-1,) + (1,) * len(self.block_shape))
        return StepFunction(grid, values)

    def _aligned(self, other: 'StepFunction'):
        grid = self.grid.union(other.grid)
        return grid, self.refine(grid).values, other.refine(grid).values

    def inner(self, other: 'StepFunction') -> float:
        """∫ self_t' other_t dt（ベクトル値同士、共通座標のみ）"""
        grid, a, b = self._aligned(other)
        k = min(a.shape[1], b.shape[1])
        return float(np.sum(grid.dt * np.einsum('ij,ij->i', a[:, :k], b[:, :k])))

    def squared_norm(self) -> float:
        """∫ |self_t|^2 dt"""
        flat = self.values.reshape(self.grid.n_steps, -1)
        return float(np.sum(self.grid.dt * np.sum(flat ** 2, axis=1)))

    def column(self, j: int) -> 'StepFunction':
        """行列値関数の第 j 列"""
        if len(self.block_shape) != 2:
            raise ValueError("column() requires matrix-valued blocks")
        return StepFunction(self.grid, self.values[:, :, j])

    def matvec(self, q: Union[ArrayLike, 'StepFunction']) -> 'StepFunction':
        """行列値関数と定数ベクトル（またはベクトル値関数）の積"""
        if len(self.block_shape) != 2:
            raise ValueError("matvec() requires matrix-valued blocks")
        if isinstance(q, StepFunction):
            grid, a, b = self._aligned(q)
            return StepFunction(grid, np.einsum('ijk,ik->ij', a, b))
        q = np.atleast_1d(np.asarray(q, dtype=float))
        return StepFunction(self.grid, self.values @ q)

    def solve(self, rhs: 'StepFunction') -> 'StepFunction':
        """区間ごとに self_t x_t = rhs_t を解く"""
        grid, a, b = self._aligned(rhs)
        return StepFunction(grid, np.linalg.solve(a, b[..., None])[..., 0])

    def condition_numbers(self) -> np.ndarray:
        return np.linalg.cond(self.values)

    def __add__(self, other: 'StepFunction') -> 'StepFunction':
        grid, a, b = self._aligned(other)
        return StepFunction(grid, a + b)

    def __sub__(self, other: 'StepFunction') -> 'StepFunction':
        return self + (-1.0) * other

    def __mul__(self, factor: float) -> 'StepFunction':
        return StepFunction(self.grid, self.values * float(factor))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"StepFunction({self.grid!r}, block_shape={self.block_shape})"
