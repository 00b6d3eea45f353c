"""
Backward dynamic programming for the separated control problem on the
Bloch ball, with a two-branch Markov-chain approximation of the filter.
"""
import logging
import os
from typing import Optional

import numpy as np
import pandas as pd

import storage
from core.config import EPS_GRID
from core.exceptions import ConfigError, DimensionError, NumericalError
from bellman.model import ResidualReport, ResidualRow, StateGrid, Transitions, ValueFunction
from model.model import CostSpec, SystemModel
from model.service import bloch_to_matrix, matrix_to_bloch
from model.strategies import ControlStrategy
from sme.service import jump_intensity, jump_update

logger = logging.getLogger("bellman")

RESIDUAL_FLOOR = 1e-9


def _require_qubit(model: SystemModel):
    if model.dim != 2:
        raise DimensionError(f"dynamic programming is limited to dim 2 (Bloch ball), got dim {model.dim}")


def _dag(a):
    return np.conj(np.swapaxes(a, -1, -2))


def _tr(a):
    return np.real(np.trace(a, axis1=-2, axis2=-1))


def local_transitions(model: SystemModel, rho: np.ndarray, u: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Two-branch kernel for a stack of states (n, d, d) under one control.
    Returns successor states (n, 2, d, d) and probabilities (n, 2).

    Diffusive: Bayes-weighted two-point step with increments +-|Upsilon| sqrt(dt),
    whose mean reproduces rho + L(u) rho dt to first order.
    Counting: jump with probability lambda dt, otherwise the no-jump step.
    """
    rho = np.asarray(rho, dtype=np.complex128)
    n, d = rho.shape[0], rho.shape[-1]
    c = model.coeffs
    uu = np.full(n, float(u))

    if model.mode == "diffusive":
        l, h, ups = c.l(u)[0], c.h(u)[0], complex(c.upsilon(u)[0])
        a = -1j * h - 0.5 * l.conj().T @ l
        g = l / ups
        step = abs(ups) * np.sqrt(dt)
        eye = np.eye(d, dtype=np.complex128)
        succ = np.empty((n, 2, d, d), dtype=np.complex128)
        weights = np.empty((n, 2))
        for b, s in enumerate((1.0, -1.0)):
            m = eye + a * dt + s * step * g
            post = m @ rho @ m.conj().T
            w = _tr(post)
            succ[:, b] = post / w[:, None, None]
            weights[:, b] = w
        return succ, weights / weights.sum(axis=1, keepdims=True)

    lam = jump_intensity(model, rho, uu)
    p_jump = lam * dt
    if np.any(p_jump > 1.0):
        raise NumericalError(f"jump probability {np.max(p_jump):.3g} exceeds 1; reduce dt")
    b = c.b(uu)
    post = b @ rho @ _dag(b)
    w = _tr(post)
    jumped = np.where(w[:, None, None] > 0, post / np.where(w > 0, w, 1.0)[:, None, None], rho)
    quiet = jump_update(model, rho, uu, dt, np.zeros(n, dtype=bool), "kraus")
    succ = np.stack([jumped, quiet], axis=1)
    return succ, np.stack([p_jump, 1.0 - p_jump], axis=1)


def local_transition(theta, u: float, dt: float, model: SystemModel) -> list[tuple[float, np.ndarray]]:
    """Successors of one Bloch vector as (probability, Bloch vector); zero-probability branches dropped."""
    _require_qubit(model)
    rho = bloch_to_matrix(np.asarray(theta, dtype=float))[None]
    succ, prob = local_transitions(model, rho, u, dt)
    bloch = matrix_to_bloch(succ[0])
    return [(float(p), bloch[b]) for b, p in enumerate(prob[0]) if p > 0]


def build_transitions(model: SystemModel, cost: CostSpec, grid: StateGrid, dt: float, controls: np.ndarray) -> Transitions:
    rho = bloch_to_matrix(grid.projected())
    m, size = controls.size, grid.size
    index = np.empty((m, size, 16), dtype=np.int32)
    weight = np.empty((m, size, 16))
    running = np.empty((m, size))

    for j, u in enumerate(controls):
        succ, prob = local_transitions(model, rho, u, dt)
        idx, w = grid.stencil(matrix_to_bloch(succ).reshape(-1, 3))
        index[j] = idx.reshape(size, 16)
        weight[j] = (w.reshape(size, 2, 8) * prob[:, :, None]).reshape(size, 16)
        running[j] = cost.running_expectation(rho, np.full(size, u))
    return Transitions(index=index, weight=weight, running=running)


def backward_step(v_next: np.ndarray, transitions: Transitions, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """
    V_k(node) = min_j { running_j(node) dt + E_j[V_{k+1}] }; ties go to the lowest control index.
    """
    q = transitions.running * dt + (transitions.weight * v_next[transitions.index]).sum(axis=-1)
    if not np.all(np.isfinite(q)):
        raise NumericalError("non-finite values in backward step")
    policy = np.argmin(q, axis=0)
    return q[policy, np.arange(q.shape[1])], policy


def solve(
    model: SystemModel,
    cost: CostSpec,
    grid: StateGrid,
    T: float,
    K: int,
    controls=None,
) -> ValueFunction:
    _require_qubit(model)
    if K < 1:
        raise ConfigError("bellman.time_steps must be at least 1")
    controls = np.asarray(model.range.grid if controls is None else controls, dtype=float)
    dt = T / K
    times = np.linspace(0.0, T, K + 1)

    logger.info(f"solving on {grid.n}^3 grid, {K} steps, {controls.size} controls")
    transitions = build_transitions(model, cost, grid, dt, controls)

    values = np.empty((K + 1, grid.size))
    policy = np.empty((K, grid.size), dtype=np.uint8 if controls.size <= 256 else np.int32)
    values[K] = cost.terminal_expectation(bloch_to_matrix(grid.projected()))

    for k in range(K - 1, -1, -1):
        values[k], policy[k] = backward_step(values[k + 1], transitions, dt)
        if k % 50 == 0:
            logger.debug(f"slice {k}: V range [{values[k].min():.4g}, {values[k].max():.4g}]")

    return ValueFunction(
        grid=grid,
        times=times,
        controls=controls,
        values=values,
        policy=policy,
        mode=model.mode,
        model_name=model.name,
    )


def discretization_estimate(model: SystemModel, cost: CostSpec, vf: ValueFunction) -> float:
    """
    Largest change of V(0, .) at the interior nodes when re-solving on a grid
    with (n+1)//2 points per axis and half the time steps.
    """
    coarse_grid = StateGrid(max(2, (vf.grid.n + 1) // 2), vf.grid.eps_grid)
    coarse = solve(model, cost, coarse_grid, float(vf.times[-1]), max(1, vf.K // 2), vf.controls)
    interior = vf.grid.interior
    if not np.any(interior):
        interior = vf.grid.in_ball
    fine = vf.values[0, interior]
    approx = coarse.value(0, vf.grid.nodes[interior])
    eps = float(np.max(np.abs(fine - approx)))
    logger.info(f"discretization estimate {eps:.3e}")
    return eps


class SeparatedPolicy(ControlStrategy):
    """
    Feedback on the current filter state through the solved policy table:
    nearest time slice, trilinear interpolation of the control in the Bloch
    vector, then snapping to the nearest grid control.
    """

    variant = "separated"

    def __init__(self, vf: ValueFunction, eps_grid: float = EPS_GRID, name: str = "separated"):
        self.grid = vf.grid
        self.controls_grid = np.asarray(vf.controls, dtype=float)
        self.table = vf.policy
        self.dt = vf.dt
        self.eps_grid = eps_grid
        self.name = name

    def slice_for(self, t: float) -> int:
        return int(min(max(np.floor(t / self.dt + 0.5), 0), self.table.shape[0] - 1))

    def controls(self, k, t, rho, dy_history):
        theta = matrix_to_bloch(rho)
        norms = np.linalg.norm(theta, axis=-1)
        if np.any(norms > 1.0 + self.eps_grid):
            raise NumericalError(f"filter state outside the Bloch ball (|r| = {norms.max():.6f})")
        u = self.grid.interpolate(self.controls_grid[self.table[self.slice_for(t)]], theta)
        nearest = np.argmin(np.abs(u[:, None] - self.controls_grid[None, :]), axis=1)
        return self.controls_grid[nearest]


def extract_policy(vf: ValueFunction, grid: Optional[StateGrid] = None) -> SeparatedPolicy:
    if grid is not None and grid.n != vf.grid.n:
        raise ConfigError("grid does not match the value function")
    return SeparatedPolicy(vf)


def random_cell_midpoints(grid: StateGrid, count: int, seed: int = 0) -> np.ndarray:
    """
    Centres of grid cells next to randomly chosen interior nodes, one per node,
    offset by h/2 towards the origin on every axis. Only cells whose eight
    corners lie in the ball are used, so no projected value enters the stencil.
    """
    nodes = grid.nodes[grid.interior]
    points = np.unique(nodes - 0.5 * grid.h * np.where(nodes > 0, 1.0, -1.0), axis=0)
    index, _ = grid.stencil(points)
    points = points[np.all(grid.in_ball[index], axis=1)]
    if points.shape[0] == 0:
        raise ConfigError("grid has no interior cells")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(points.shape[0], size=min(count, points.shape[0]), replace=False)
    return points[np.sort(chosen)]


def hjb_residual(
    vf: ValueFunction,
    model: SystemModel,
    cost: CostSpec,
    sample,
    k: int = 0,
    eps_disc: Optional[float] = None,
) -> ResidualReport:
    """
    At each sample point theta and slice k, in rate units:
      e_j = dV/dt + (generator of control j) V + Tr[theta C(u_j)]
          = (Tr[theta C(u_j)] dt + E_j[V_{k+1}] - V_k(theta)) / dt.
    condition2 is e at the control the extracted policy picks at theta, which
    interpolates the table off-node; condition3_min is min_j e_j. Both should
    sit within the band 5 eps_disc / dt. Sample off the nodes (cell midpoints),
    where V is interpolated rather than minimized.
    """
    _require_qubit(model)
    if not 0 <= k < vf.K:
        raise ConfigError(f"slice {k} out of range")
    if np.any(np.isnan(vf.values[k])) or np.any(np.isnan(vf.values[k + 1])):
        raise ConfigError(f"value slices {k}, {k + 1} are not stored")

    points = np.atleast_2d(np.asarray(sample, dtype=float))
    rho = bloch_to_matrix(points)
    dt = vf.dt
    v_here = vf.value(k, points)

    expr = np.empty((vf.controls.size, points.shape[0]))
    for j, u in enumerate(vf.controls):
        succ, prob = local_transitions(model, rho, u, dt)
        nxt = vf.value(k + 1, matrix_to_bloch(succ).reshape(-1, 3)).reshape(-1, 2)
        running = cost.running_expectation(rho, np.full(points.shape[0], u))
        expr[j] = (running * dt + (prob * nxt).sum(axis=1) - v_here) / dt

    picked = SeparatedPolicy(vf).controls(k, k * dt, rho, None)
    chosen = np.argmin(np.abs(picked[:, None] - np.asarray(vf.controls)[None, :]), axis=1)
    cond2 = expr[chosen, np.arange(points.shape[0])]
    cond3 = expr.min(axis=0)

    eps = float(eps_disc if eps_disc is not None else (vf.eps_disc or 0.0))
    band = 5.0 * eps / dt + RESIDUAL_FLOOR
    rows = [
        ResidualRow(k=k, theta=points[i].tolist(), condition2=float(cond2[i]), condition3_min=float(cond3[i]))
        for i in range(points.shape[0])
    ]
    return ResidualReport(
        dt=dt,
        eps_disc=eps,
        band=band,
        rows=rows,
        max_abs_condition2=float(np.max(np.abs(cond2))),
        min_condition3=float(np.min(cond3)),
        passed=bool(np.all(cond3 >= -band) and np.all(np.abs(cond2) <= band)),
    )


# -----------------------------
# Persistence
# -----------------------------

HEADER_FILE = "value_function.json"
POLICY_FILE = "policy.csv"
VALUES_FILE = "values.csv"


def saved_slices(K: int, save_every: Optional[int] = None) -> list[int]:
    """Slices kept in values.csv: every save_every steps plus t = 0 and T."""
    save_every = save_every or max(1, K // 10)
    return sorted(set(range(0, K + 1, save_every)) | {0, K})


def _node_frame(grid: StateGrid) -> pd.DataFrame:
    return pd.DataFrame(
        {"node": np.arange(grid.size), "x": grid.nodes[:, 0], "y": grid.nodes[:, 1], "z": grid.nodes[:, 2]}
    )


def save_value_function(vf: ValueFunction, out_dir: str, save_every: Optional[int] = None) -> list[str]:
    slices = [k for k in saved_slices(vf.K, save_every) if not np.any(np.isnan(vf.values[k]))]
    header = {
        "grid_n": vf.grid.n,
        "eps_grid": vf.grid.eps_grid,
        "T": float(vf.times[-1]),
        "K": vf.K,
        "controls": vf.controls.tolist(),
        "mode": vf.mode,
        "model": vf.model_name,
        "eps_disc": vf.eps_disc,
        "saved_slices": slices,
    }
    policy = pd.concat(
        [_node_frame(vf.grid), pd.DataFrame(vf.policy.T.astype(int), columns=[f"k{k}" for k in range(vf.K)])],
        axis=1,
    )
    values = pd.concat(
        [_node_frame(vf.grid), pd.DataFrame(vf.values[slices].T, columns=[f"v{k}" for k in slices])],
        axis=1,
    )
    return [
        storage.upload_json(out_dir, HEADER_FILE, header),
        storage.upload_frame(out_dir, POLICY_FILE, policy),
        storage.upload_frame(out_dir, VALUES_FILE, values),
    ]


def load_value_function(path: str) -> ValueFunction:
    header_path = os.path.join(path, HEADER_FILE)
    if not os.path.exists(header_path):
        raise ConfigError(f"value function not found in {path}")
    header = storage.download_json(header_path)
    grid = StateGrid(int(header["grid_n"]), float(header["eps_grid"]))
    K = int(header["K"])
    controls = np.asarray(header["controls"], dtype=float)

    policy_frame = storage.download_frame(os.path.join(path, POLICY_FILE))
    values_frame = storage.download_frame(os.path.join(path, VALUES_FILE))
    if len(policy_frame) != grid.size or len(values_frame) != grid.size:
        raise ConfigError("value function tables do not match the grid header")

    policy = policy_frame[[f"k{k}" for k in range(K)]].to_numpy().T
    policy = policy.astype(np.uint8 if controls.size <= 256 else np.int32)
    values = np.full((K + 1, grid.size), np.nan)
    for k in header["saved_slices"]:
        values[k] = values_frame[f"v{k}"].to_numpy()

    return ValueFunction(
        grid=grid,
        times=np.linspace(0.0, float(header["T"]), K + 1),
        controls=controls,
        values=values,
        policy=policy,
        mode=header["mode"],
        model_name=header["model"],
        eps_disc=header["eps_disc"],
    )
