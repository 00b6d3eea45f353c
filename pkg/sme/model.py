from dataclasses import dataclass
from typing import Optional

import numpy as np

from model.model import Mode


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """
    A stack of realizations on one uniform grid.
    times: (N+1,); dY, u_path, innovations: (n, N); rho_path: (n, N+1, d, d).
    For counting mode dY holds the 0/1 jump indicators of the unit-jump process.
    """

    times: np.ndarray
    dY: np.ndarray
    rho_path: np.ndarray
    u_path: np.ndarray
    innovations: np.ndarray
    indices: np.ndarray
    mode: Mode
    seed: int
    running_costs: Optional[np.ndarray] = None
    terminal_costs: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.dY.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dY.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def record(self, i: int) -> "TrajectoryRecord":
        return TrajectoryRecord(
            times=self.times,
            dY=self.dY[i],
            rho_path=self.rho_path[i],
            u_path=self.u_path[i],
            innovations=self.innovations[i],
            index=int(self.indices[i]),
            mode=self.mode,
            seed=self.seed,
            running_costs=None if self.running_costs is None else self.running_costs[i],
            terminal_cost=None if self.terminal_costs is None else float(self.terminal_costs[i]),
        )

    def records(self) -> list["TrajectoryRecord"]:
        return [self.record(i) for i in range(self.n)]


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    times: np.ndarray
    dY: np.ndarray
    rho_path: np.ndarray
    u_path: np.ndarray
    innovations: np.ndarray
    index: int
    mode: Mode
    seed: int
    running_costs: Optional[np.ndarray] = None
    terminal_cost: Optional[float] = None

    @property
    def n_steps(self) -> int:
        return self.dY.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def observation_path(self) -> np.ndarray:
        """Y on the grid, Y_0 = 0."""
        return np.concatenate([[0.0], np.cumsum(self.dY)])

    def innovation_path(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.innovations)])


def stack_records(records: list[TrajectoryRecord]) -> TrajectoryBatch:
    first = records[0]
    costs = None if first.running_costs is None else np.stack([r.running_costs for r in records])
    terminal = None if first.terminal_cost is None else np.array([r.terminal_cost for r in records])
    return TrajectoryBatch(
        times=first.times,
        dY=np.stack([r.dY for r in records]),
        rho_path=np.stack([r.rho_path for r in records]),
        u_path=np.stack([r.u_path for r in records]),
        innovations=np.stack([r.innovations for r in records]),
        indices=np.array([r.index for r in records]),
        mode=first.mode,
        seed=first.seed,
        running_costs=costs,
        terminal_costs=terminal,
    )
