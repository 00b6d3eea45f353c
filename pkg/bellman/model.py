from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from pydantic import BaseModel

from core.config import EPS_GRID


@dataclass(frozen=True, eq=False)
class StateGrid:
    """
    Full cube lattice linspace(-1, 1, n)^3 over the Bloch ball. Nodes outside
    the ball carry the value of their radial projection onto the sphere.
    """

    n: int
    eps_grid: float = EPS_GRID
    axis: np.ndarray = field(init=False)
    nodes: np.ndarray = field(init=False)

    def __post_init__(self):
        axis = np.linspace(-1.0, 1.0, self.n)
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "nodes", np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1))

    @property
    def h(self) -> float:
        return 2.0 / (self.n - 1)

    @property
    def size(self) -> int:
        return self.n**3

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.nodes, axis=1)

    @property
    def in_ball(self) -> np.ndarray:
        return self.norms <= 1.0 + self.eps_grid

    @property
    def interior(self) -> np.ndarray:
        return self.norms <= 1.0 - self.h

    def projected(self) -> np.ndarray:
        return project_to_ball(self.nodes)

    def flat_index(self, i, j, k):
        return (np.asarray(i) * self.n + np.asarray(j)) * self.n + np.asarray(k)

    def stencil(self, points) -> tuple[np.ndarray, np.ndarray]:
        """
        Corner node indices (m, 8) int32 and trilinear weights (m, 8) of the
        cells enclosing the given points (projected onto the ball first).
        """
        p = project_to_ball(np.atleast_2d(np.asarray(points, dtype=float)))
        scaled = (np.clip(p, -1.0, 1.0) + 1.0) / self.h
        base = np.clip(np.floor(scaled), 0, self.n - 2).astype(np.int32)
        frac = np.clip(scaled - base, 0.0, 1.0)

        index = np.empty((p.shape[0], 8), dtype=np.int32)
        weight = np.empty((p.shape[0], 8))
        c = 0
        for dx in (0, 1):
            wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
            for dy in (0, 1):
                wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
                for dz in (0, 1):
                    wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                    index[:, c] = self.flat_index(base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz)
                    weight[:, c] = wx * wy * wz
                    c += 1
        return index, weight

    def interpolate(self, values: np.ndarray, points) -> np.ndarray:
        index, weight = self.stencil(points)
        return (weight * values[index]).sum(axis=1)


def project_to_ball(points: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(points, axis=-1, keepdims=True)
    return np.where(norms > 1.0, points / np.maximum(norms, 1e-300), points)


@dataclass(frozen=True, eq=False)
class Transitions:
    """
    Precomputed one-step kernels: for control j and node i, the successor
    values are sum(weight[j, i] * V[index[j, i]]). Weights fold the branch
    probabilities into the interpolation weights.
    """

    index: np.ndarray
    weight: np.ndarray
    running: np.ndarray


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """
    values: (K+1, n^3), NaN on slices not kept after a reload.
    policy: (K, n^3) control indices into `controls`.
    """

    grid: StateGrid
    times: np.ndarray
    controls: np.ndarray
    values: np.ndarray
    policy: np.ndarray
    mode: str = "diffusive"
    model_name: str = ""
    eps_disc: Optional[float] = None

    @property
    def K(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def slice_index(self, t: float) -> int:
        return int(min(max(np.floor(t / self.dt + 0.5), 0), self.K))

    def value(self, k: int, points) -> np.ndarray:
        return self.grid.interpolate(self.values[k], points)

    def with_eps_disc(self, eps: float) -> "ValueFunction":
        return ValueFunction(self.grid, self.times, self.controls, self.values, self.policy, self.mode, self.model_name, eps)


class ResidualRow(BaseModel):
    k: int
    theta: list[float]
    condition2: float
    condition3_min: float


class ResidualReport(BaseModel):
    dt: float
    eps_disc: float
    band: float
    rows: list[ResidualRow]
    max_abs_condition2: float
    min_condition3: float
    passed: bool
