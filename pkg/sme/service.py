"""
Normalized (nonlinear) filters for diffusive and counting observations,
trajectory generation under a control strategy, and ensemble runs.
"""
import logging
from dataclasses import replace
from typing import Callable, Optional

import numpy as np
import pandas as pd

from core.config import CHUNK_SIZE, MAX_JUMP_PROBABILITY, UPSILON_MIN, XI_MIN
from core.exceptions import ConfigError, ControlRangeError, EmptyEnsembleError, NumericalError
from core.pool import chunk_indices, map_chunks, trajectory_rng
from model.model import CostSpec, SystemModel, as_controls
from model.service import matrix_to_bloch
from model.strategies import ControlStrategy
from sme.model import TrajectoryBatch, TrajectoryRecord, stack_records

logger = logging.getLogger("sme")

SCHEMES = ("euler", "kraus")
INCREMENTS = ("gaussian", "binary")


def _stack(rho) -> tuple[np.ndarray, bool]:
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.ndim == 2:
        return rho[None], True
    return rho, False


def _dag(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def _tr(a: np.ndarray) -> np.ndarray:
    return np.trace(a, axis1=-2, axis2=-1)


def _normalize(rho: np.ndarray) -> np.ndarray:
    rho = 0.5 * (rho + _dag(rho))
    return rho / np.real(_tr(rho))[:, None, None]


def n_steps(T: float, dt: float) -> int:
    steps = T / dt
    n = int(round(steps))
    if n < 1 or abs(steps - n) > 1e-9 * max(1.0, steps):
        raise ConfigError("T/dt must be a positive integer")
    return n


def lindblad_generator(rho: np.ndarray, h: np.ndarray, l: np.ndarray) -> np.ndarray:
    """-i[H, rho] + L rho L* - 1/2 {L*L, rho}, batched."""
    ld = _dag(l)
    ldl = ld @ l
    return -1j * (h @ rho - rho @ h) + l @ rho @ ld - 0.5 * (ldl @ rho + rho @ ldl)


def drift_lindblad(rho, u, model: SystemModel) -> np.ndarray:
    rho, single = _stack(rho)
    u = np.broadcast_to(as_controls(u), (rho.shape[0],))
    out = lindblad_generator(rho, model.coeffs.h(u), model.coeffs.l(u))
    return out[0] if single else out


def observation_drift(rho: np.ndarray, u: np.ndarray, model: SystemModel) -> np.ndarray:
    """Tr[(Xi L*L + Upsilon* L + Upsilon L*) rho], the compensator rate of Y."""
    c = model.coeffs
    l = c.l(u)
    ups = c.upsilon(u)[:, None, None]
    xi = c.xi(u)[:, None, None]
    op = xi * (_dag(l) @ l) + np.conj(ups) * l + ups * _dag(l)
    return np.real(_tr(op @ rho))


# -----------------------------
# Diffusive observations
# -----------------------------

def _check_upsilon(ups: np.ndarray, upsilon_min: float):
    if np.any(np.abs(ups) < upsilon_min):
        raise NumericalError(f"|Upsilon(u)| below {upsilon_min}")


def diffusive_update(model: SystemModel, rho: np.ndarray, u: np.ndarray, dt: float, dy: np.ndarray, scheme: str = "kraus", upsilon_min: float = UPSILON_MIN) -> np.ndarray:
    """
    Advance the diffusive filter by one step given the observation increments dy.
    """
    c = model.coeffs
    ups = c.upsilon(u)
    _check_upsilon(ups, upsilon_min)
    l = c.l(u)
    h = c.h(u)
    g = (1.0 / ups)[:, None, None] * l
    dy = np.asarray(dy, dtype=float)

    if scheme == "euler":
        dz = dy - observation_drift(rho, u, model) * dt
        gain = g @ rho + rho @ _dag(g)
        gain = gain - np.real(_tr(gain))[:, None, None] * rho
        new = rho + lindblad_generator(rho, h, l) * dt + gain * dz[:, None, None]
    elif scheme == "kraus":
        eye = np.eye(model.dim, dtype=np.complex128)
        m = eye + (-1j * h - 0.5 * _dag(l) @ l) * dt + g * dy[:, None, None]
        new = m @ rho @ _dag(m)
    else:
        raise ConfigError(f"unknown scheme '{scheme}'")
    return _normalize(new)


def step_diffusive(model: SystemModel, rho, u, dt: float, dW, scheme: str = "kraus", upsilon_min: float = UPSILON_MIN):
    """
    One filter step driven by the innovation increment dW.
    Returns (rho', dY) with dY = dW + Tr[(Upsilon* L + Upsilon L*) rho] dt.
    """
    rho, single = _stack(rho)
    u = np.broadcast_to(as_controls(u), (rho.shape[0],))
    dW = np.broadcast_to(np.asarray(dW, dtype=float), (rho.shape[0],))
    if not np.all(np.isfinite(dW)):
        raise NumericalError("non-finite innovation increment")

    dy = dW + observation_drift(rho, u, model) * dt
    new = diffusive_update(model, rho, u, dt, dy, scheme, upsilon_min)
    if single:
        return new[0], float(dy[0])
    return new, dy


# -----------------------------
# Counting observations
# -----------------------------

def jump_intensity(model: SystemModel, rho: np.ndarray, u: np.ndarray, xi_min: float = XI_MIN) -> np.ndarray:
    """lambda = Xi^-2 Tr[B rho B*], B = Upsilon + Xi L."""
    c = model.coeffs
    xi = c.xi(u)
    if np.any(np.abs(xi) < xi_min):
        raise NumericalError(f"|Xi(u)| below {xi_min}")
    b = c.b(u)
    return np.real(_tr(b @ rho @ _dag(b))) / xi**2


def jump_update(model: SystemModel, rho: np.ndarray, u: np.ndarray, dt: float, jumped: np.ndarray, scheme: str = "kraus", xi_min: float = XI_MIN) -> np.ndarray:
    """
    Advance the counting filter by one step given the jump indicators.
    Jump: rho' = B rho B* / Tr[B rho B*]. No jump: the compensated drift step.
    """
    c = model.coeffs
    xi = c.xi(u)
    if np.any(np.abs(xi) < xi_min):
        raise NumericalError(f"|Xi(u)| below {xi_min}")
    b = c.b(u)
    l = c.l(u)
    h = c.h(u)
    brb = b @ rho @ _dag(b)
    weight = np.real(_tr(brb))
    lam = weight / xi**2
    jumped = np.asarray(jumped, dtype=bool)

    if scheme == "euler":
        quiet = rho + (lindblad_generator(rho, h, l) - brb / (xi**2)[:, None, None] + lam[:, None, None] * rho) * dt
    elif scheme == "kraus":
        ups = c.upsilon(u)
        eye = np.eye(model.dim, dtype=np.complex128)
        k = (
            -1j * h
            - 0.5 * _dag(l) @ l
            - (np.conj(ups) / xi)[:, None, None] * l
            - (0.5 * np.abs(ups) ** 2 / xi**2)[:, None, None] * eye
        )
        m0 = eye + k * dt
        quiet = m0 @ rho @ _dag(m0)
    else:
        raise ConfigError(f"unknown scheme '{scheme}'")

    new = _normalize(quiet)
    if np.any(jumped):
        new[jumped] = _normalize(brb[jumped])
    return new


def step_jump(model: SystemModel, rho, u, dt: float, rng, scheme: str = "kraus", xi_min: float = XI_MIN):
    """
    One counting-mode step. `rng` is a numpy Generator or an array of uniforms
    (one per trajectory). Returns (rho', jumped).
    """
    rho, single = _stack(rho)
    n = rho.shape[0]
    u = np.broadcast_to(as_controls(u), (n,))
    uniforms = rng.random(n) if isinstance(rng, np.random.Generator) else np.broadcast_to(np.asarray(rng, dtype=float), (n,))

    lam = jump_intensity(model, rho, u, xi_min)
    if np.any(lam * dt >= MAX_JUMP_PROBABILITY):
        raise NumericalError(f"jump probability lambda*dt={np.max(lam * dt):.3g} too large; reduce dt")
    jumped = uniforms < lam * dt
    new = jump_update(model, rho, u, dt, jumped, scheme, xi_min)
    if single:
        return new[0], int(jumped[0])
    return new, jumped.astype(int)


# -----------------------------
# Trajectories
# -----------------------------

def draw_noise(mode: str, seed: int, indices, steps: int, increments: str = "gaussian") -> np.ndarray:
    """
    Per-trajectory noise, drawn from the (seed, index) stream:
    unit-variance increments for diffusive mode, uniforms for counting mode.
    """
    if increments not in INCREMENTS:
        raise ConfigError(f"unknown increments '{increments}'")
    rows = []
    for i in indices:
        rng = trajectory_rng(seed, i)
        if mode == "counting":
            rows.append(rng.random(steps))
        elif increments == "binary":
            rows.append(np.where(rng.random(steps) < 0.5, -1.0, 1.0))
        else:
            rows.append(rng.standard_normal(steps))
    return np.array(rows).reshape(len(rows), steps)


def query_controls(strategy: ControlStrategy, model: SystemModel, k: int, t: float, rho: np.ndarray, dy_history: np.ndarray) -> np.ndarray:
    u = np.broadcast_to(as_controls(strategy.controls(k, t, rho, dy_history)), (rho.shape[0],)).astype(float)
    if not np.all(model.range.contains(u)):
        bad = u[~model.range.contains(u)][0]
        raise ControlRangeError(f"strategy '{strategy.name}' returned u={bad:g} outside [{model.range.u_min:g}, {model.range.u_max:g}]")
    return u


def simulate_batch(
    model: SystemModel,
    strategy: ControlStrategy,
    T: float,
    dt: float,
    seed: int,
    indices,
    scheme: str = "kraus",
    increments: str = "gaussian",
    cost: Optional[CostSpec] = None,
) -> TrajectoryBatch:
    indices = np.asarray(indices, dtype=int)
    steps = n_steps(T, dt)
    n = indices.size
    d = model.dim
    noise = draw_noise(model.mode, seed, indices, steps, increments)

    rho = np.broadcast_to(np.asarray(model.rho0, dtype=np.complex128), (n, d, d)).copy()
    rho_path = np.empty((n, steps + 1, d, d), dtype=np.complex128)
    rho_path[:, 0] = rho
    dY = np.zeros((n, steps))
    u_path = np.zeros((n, steps))
    innovations = np.zeros((n, steps))

    for k in range(steps):
        t = k * dt
        u = query_controls(strategy, model, k, t, rho, dY[:, :k])
        if model.mode == "diffusive":
            dW = noise[:, k] * np.abs(model.coeffs.upsilon(u)) * np.sqrt(dt)
            rho, dy = step_diffusive(model, rho, u, dt, dW, scheme)
            innovations[:, k] = dW
        else:
            lam = jump_intensity(model, rho, u)
            rho, dy = step_jump(model, rho, u, dt, noise[:, k], scheme)
            innovations[:, k] = model.coeffs.xi(u) * (dy - lam * dt)
        dY[:, k] = dy
        u_path[:, k] = u
        rho_path[:, k + 1] = rho

    running = terminal = None
    if cost is not None:
        running = np.stack([cost.running_expectation(rho_path[:, k], u_path[:, k]) for k in range(steps)], axis=1)
        terminal = cost.terminal_expectation(rho_path[:, -1])

    return TrajectoryBatch(
        times=np.arange(steps + 1) * dt,
        dY=dY,
        rho_path=rho_path,
        u_path=u_path,
        innovations=innovations,
        indices=indices,
        mode=model.mode,
        seed=int(seed),
        running_costs=running,
        terminal_costs=terminal,
    )


def generate_trajectory(
    model: SystemModel,
    strategy: ControlStrategy,
    cost: Optional[CostSpec],
    T: float,
    dt: float,
    seed: int,
    scheme: str = "kraus",
    increments: str = "gaussian",
    index: int = 0,
) -> TrajectoryRecord:
    return simulate_batch(model, strategy, T, dt, seed, [index], scheme, increments, cost).record(0)


def filter_record(model: SystemModel, dY: np.ndarray, u_path: np.ndarray, dt: float, scheme: str = "euler", rho0=None) -> np.ndarray:
    """
    Run the nonlinear filter along given observation records and control paths.
    dY, u_path: (n, N) or (N,). Returns the state path (n, N+1, d, d).
    """
    dY = np.atleast_2d(np.asarray(dY, dtype=float))
    u_path = np.atleast_2d(np.asarray(u_path, dtype=float))
    n, steps = dY.shape
    d = model.dim
    rho0 = model.rho0 if rho0 is None else rho0
    rho = np.broadcast_to(np.asarray(rho0, dtype=np.complex128), (n, d, d)).copy()
    path = np.empty((n, steps + 1, d, d), dtype=np.complex128)
    path[:, 0] = rho
    for k in range(steps):
        if model.mode == "diffusive":
            rho = diffusive_update(model, rho, u_path[:, k], dt, dY[:, k], scheme)
        else:
            rho = jump_update(model, rho, u_path[:, k], dt, dY[:, k] > 0.5, scheme)
        path[:, k + 1] = rho
    return path


# -----------------------------
# Ensembles
# -----------------------------

def _simulate_and_reduce(indices, model, strategy, T, dt, seed, scheme, increments, cost, reducer):
    batch = simulate_batch(model, strategy, T, dt, seed, indices, scheme, increments, cost)
    return reducer(batch)


def keep_batch(batch: TrajectoryBatch) -> TrajectoryBatch:
    return batch


def run_ensemble(
    model: SystemModel,
    strategy: ControlStrategy,
    T: float,
    dt: float,
    n: int,
    seed: int,
    reducer: Callable[[TrajectoryBatch], object] = keep_batch,
    scheme: str = "kraus",
    increments: str = "gaussian",
    cost: Optional[CostSpec] = None,
    jobs: int | None = None,
    chunk_size: int = CHUNK_SIZE,
) -> list:
    """
    Simulate trajectories 0..n-1 in chunks and return reducer(chunk) per chunk, in order.
    """
    chunks = chunk_indices(n, chunk_size)
    logger.info(f"ensemble of {n} trajectories ({model.mode}, {scheme}) under '{strategy.name}' in {len(chunks)} chunks")
    return map_chunks(
        _simulate_and_reduce,
        chunks,
        args=(model, strategy, T, dt, seed, scheme, increments, cost, reducer),
        jobs=jobs,
    )


class BlochMoments:
    """Reducer: per-time sums of Bloch vectors and their squares (dim 2)."""

    def __call__(self, batch: TrajectoryBatch):
        bloch = matrix_to_bloch(batch.rho_path)
        return batch.n, bloch.sum(axis=0), (bloch**2).sum(axis=0)


def ensemble_bloch_stats(parts) -> tuple[np.ndarray, np.ndarray, int]:
    """Combine BlochMoments parts into (mean, stderr, n) per time."""
    n = sum(p[0] for p in parts)
    s1 = sum(p[1] for p in parts)
    s2 = sum(p[2] for p in parts)
    mean = s1 / n
    var = np.maximum(s2 / n - mean**2, 0.0) * n / max(n - 1, 1)
    return mean, np.sqrt(var / n), n


def keep_observations(batch: TrajectoryBatch) -> TrajectoryBatch:
    """Reducer that drops intermediate states, keeping rho_0 and rho_T."""
    return replace(batch, rho_path=batch.rho_path[:, [0, -1]])


# -----------------------------
# Innovations
# -----------------------------

def g_one(y_path: np.ndarray) -> np.ndarray:
    return np.ones(y_path.shape[0])


def g_y(y_path: np.ndarray) -> np.ndarray:
    return y_path[:, -1]


def g_sign_y(y_path: np.ndarray) -> np.ndarray:
    return np.sign(y_path[:, -1])


DEFAULT_TEST_FUNCTIONS = {"1": g_one, "Y_s": g_y, "sign(Y_s)": g_sign_y}


def _observation_arrays(ensemble) -> tuple[np.ndarray, np.ndarray, float]:
    if isinstance(ensemble, TrajectoryBatch):
        parts = [ensemble]
    else:
        parts = list(ensemble)
        if parts and isinstance(parts[0], TrajectoryRecord):
            parts = [stack_records(parts)]
    parts = [p for p in parts if p.n > 0]
    if not parts:
        raise EmptyEnsembleError("empty ensemble")
    dY = np.concatenate([p.dY for p in parts])
    innovations = np.concatenate([p.innovations for p in parts])
    return dY, innovations, parts[0].dt


def innovations_martingale_stat(ensemble, s: float, t: float, test_fns: dict | None = None) -> dict[str, tuple[float, float]]:
    """
    Monte Carlo estimate of E[(Z_t - Z_s) g(Y up to s)] with its standard error,
    per test function. `ensemble` is a TrajectoryBatch, a list of batches or
    a list of TrajectoryRecords. Test functions receive the observation paths
    Y_0..Y_s as an (n, k_s + 1) array.
    """
    dY, innovations, dt = _observation_arrays(ensemble)
    ks, kt = int(round(s / dt)), int(round(t / dt))
    if not 0 <= ks < kt <= dY.shape[1]:
        raise ConfigError(f"need 0 <= s < t <= T on the grid, got s={s}, t={t}")

    test_fns = test_fns or DEFAULT_TEST_FUNCTIONS
    increment = innovations[:, ks:kt].sum(axis=1)
    y_path = np.concatenate([np.zeros((dY.shape[0], 1)), np.cumsum(dY[:, :ks], axis=1)], axis=1)
    n = dY.shape[0]

    out = {}
    for name, g in test_fns.items():
        samples = increment * g(y_path)
        stderr = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
        out[name] = (float(samples.mean()), stderr)
    return out


# -----------------------------
# Output tables
# -----------------------------

def state_columns(d: int) -> list[str]:
    if d == 2:
        return ["x", "y", "z"]
    return [f"rho_{i}{j}_{part}" for i in range(d) for j in range(d) for part in ("re", "im")]


def state_values(rho_path: np.ndarray) -> np.ndarray:
    d = rho_path.shape[-1]
    if d == 2:
        return matrix_to_bloch(rho_path)
    flat = rho_path.reshape(rho_path.shape[:-2] + (d * d,))
    return np.stack([flat.real, flat.imag], axis=-1).reshape(rho_path.shape[:-2] + (2 * d * d,))


def trajectory_frame(record: TrajectoryRecord) -> pd.DataFrame:
    """One row per grid point; the terminal row leaves the step fields empty."""
    steps = record.n_steps
    pad = np.full(1, np.nan)
    frame = pd.DataFrame(
        {
            "t": record.times,
            "u": np.concatenate([record.u_path, pad]),
            "dY": np.concatenate([record.dY, pad]),
            "innovation": np.concatenate([record.innovations, pad]),
        }
    )
    states = state_values(record.rho_path)
    for j, col in enumerate(state_columns(record.rho_path.shape[-1])):
        frame[col] = states[:steps + 1, j]
    return frame


def ensemble_summary(times: np.ndarray, mean: np.ndarray, stderr: np.ndarray, reference: np.ndarray, probe_times, n: int) -> list[dict]:
    """Per probe time: ensemble mean/stderr of the Bloch vector against the Lindblad reference."""
    dt = float(times[1] - times[0])
    rows = []
    for t in probe_times:
        k = int(round(t / dt))
        if k >= times.size:
            continue
        dev = np.abs(mean[k] - reference[k])
        rows.append(
            {
                "t": float(times[k]),
                "n": int(n),
                "mean": mean[k].tolist(),
                "stderr": stderr[k].tolist(),
                "lindblad": reference[k].tolist(),
                "within_3_stderr": bool(np.all(dev <= 3 * stderr[k] + 1e-12)),
            }
        )
    return rows
