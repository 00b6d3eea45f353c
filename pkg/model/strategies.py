"""
Control strategies.

A strategy maps (step index k, time t, current filter states, observation
increments before step k) to one control per trajectory. Strategies are
pure: the same inputs always give the same controls.
"""
from typing import Literal, Sequence

import numpy as np

Variant = Literal["open_loop", "path_feedback", "separated"]


class ControlStrategy:
    variant: Variant = "open_loop"
    name: str = "strategy"

    def controls(self, k: int, t: float, rho: np.ndarray, dy_history: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, k, t, rho, dy_history):
        return self.controls(k, t, rho, dy_history)


class OpenLoop(ControlStrategy):
    variant = "open_loop"

    def value(self, k: int, t: float) -> float:
        raise NotImplementedError

    def controls(self, k, t, rho, dy_history):
        return np.full(rho.shape[0], self.value(k, t), dtype=float)

    def as_function(self, dt: float):
        """t -> u on a uniform grid of step dt (left-continuous lookup)."""
        return lambda t: self.value(int(np.floor(t / dt + 1e-9)), t)


class ConstantControl(OpenLoop):
    def __init__(self, u: float, name: str | None = None):
        self.u = float(u)
        self.name = name or f"u={self.u:g}"

    def value(self, k, t):
        return self.u


class ScheduleControl(OpenLoop):
    def __init__(self, values: Sequence[float], name: str = "schedule"):
        self.values = np.asarray(values, dtype=float)
        self.name = name

    def value(self, k, t):
        return float(self.values[min(k, self.values.size - 1)])


class RandomSchedule(OpenLoop):
    """Control drawn uniformly from `grid` at each step, from a stream keyed on (seed, k)."""

    def __init__(self, grid: Sequence[float], seed: int = 0, name: str = "randomized"):
        self.grid = np.asarray(grid, dtype=float)
        self.seed = int(seed)
        self.name = name

    def value(self, k, t):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, int(k)]))
        return float(self.grid[rng.integers(self.grid.size)])


class BangBangFeedback(ControlStrategy):
    """
    u = sign * u_max * sgn(sum of the last `window` observation increments).
    """

    variant = "path_feedback"

    def __init__(self, u_max: float, window: int = 10, sign: float = 1.0, name: str = "bang-bang"):
        self.u_max = float(u_max)
        self.window = int(window)
        self.sign = float(np.sign(sign) or 1.0)
        self.name = name

    def controls(self, k, t, rho, dy_history):
        n = rho.shape[0]
        if k == 0:
            return np.zeros(n)
        recent = dy_history[:, max(0, k - self.window):k].sum(axis=1)
        return self.sign * self.u_max * np.sign(recent)
