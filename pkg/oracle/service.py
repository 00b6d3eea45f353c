"""
Repeated-interaction model of the controlled flow: each step the system
couples to a fresh two-level ancilla in vacuum, the ancilla is measured,
and the system state is conditioned by Bayes' rule.
"""
import logging

import numpy as np

from core.config import EXPM_TOL, TOL_COMPLETENESS
from core.exceptions import ConfigError, NumericalError
from core.pool import trajectory_rng
from matcore import service as mc
from model.model import SystemModel
from model.strategies import ControlStrategy
from oracle.model import Measurement, OracleReport, OracleRow, StepKraus
from sme.model import TrajectoryBatch, TrajectoryRecord
from sme.service import filter_record, jump_intensity, n_steps, observation_drift, query_controls

logger = logging.getLogger("oracle")

MEASUREMENT_FOR_MODE = {"diffusive": "quadrature", "counting": "number"}

# ancilla ladder operators, basis (|0>, |1>)
A_PLUS = np.array([[0, 0], [1, 0]], dtype=np.complex128)
A_MINUS = np.array([[0, 1], [0, 0]], dtype=np.complex128)
VACUUM = np.array([[1, 0], [0, 0]], dtype=np.complex128)
ONE = np.array([[0, 0], [0, 1]], dtype=np.complex128)


def step_unitary(model: SystemModel, u: float, dt: float, tol: float = EXPM_TOL) -> np.ndarray:
    """
    System (x) ancilla unitary of one step:
    expm(-i H dt (x) I + sqrt(dt) (L (x) a+ - L* (x) a-)) (I (x) |0><0| + S (x) |1><1|).
    """
    c = model.coeffs
    h, l, s = c.h(u)[0], c.l(u)[0], c.s(u)[0]
    d = model.dim
    eye = np.eye(d, dtype=np.complex128)
    generator = (
        -1j * dt * np.kron(h, np.eye(2))
        + np.sqrt(dt) * (np.kron(l, A_PLUS) - np.kron(l.conj().T, A_MINUS))
    )
    gauge = np.kron(eye, VACUUM) + np.kron(s, ONE)
    return np.asarray(mc.expm(generator, tol=tol)) @ gauge


def _ancilla_blocks(unitary: np.ndarray, d: int) -> np.ndarray:
    """K_j = <j| U |0> on the system, j = 0, 1."""
    u4 = unitary.reshape(d, 2, d, 2)
    return np.stack([u4[:, 0, :, 0], u4[:, 1, :, 0]])


def build_step(
    model: SystemModel,
    u: float,
    dt: float,
    measurement: Measurement,
    tol_completeness: float = TOL_COMPLETENESS,
) -> StepKraus:
    if dt <= 0:
        raise ConfigError("dt must be positive")
    d = model.dim
    k0, k1 = _ancilla_blocks(step_unitary(model, u, dt), d)
    c = model.coeffs
    ups = complex(c.upsilon(u)[0])

    if measurement == "quadrature":
        if abs(ups) == 0:
            raise NumericalError("quadrature measurement needs Upsilon != 0")
        phase = ups / abs(ups)
        ops = np.stack([(k0 + np.conj(phase) * k1), (k0 - np.conj(phase) * k1)]) / np.sqrt(2)
        labels = ("+", "-")
        dy = np.array([1.0, -1.0]) * abs(ups) * np.sqrt(dt)
    elif measurement == "number":
        xi = float(c.xi(u)[0])
        if xi == 0:
            raise NumericalError("number measurement needs Xi != 0")
        beta = np.sqrt(dt) * ups / xi
        shift = np.asarray(mc.expm(beta * A_PLUS - np.conj(beta) * A_MINUS))
        ops = np.stack([shift[0, 0] * k0 + shift[0, 1] * k1, shift[1, 0] * k0 + shift[1, 1] * k1])
        labels = ("no-click", "click")
        dy = np.array([0.0, 1.0])
    else:
        raise ConfigError(f"unknown measurement '{measurement}'")

    step = StepKraus(labels=labels, operators=ops, dy=dy)
    defect = step.completeness_defect()
    if defect > tol_completeness:
        raise NumericalError(f"completeness defect {defect:.2e} at dt={dt:g}; reduce dt")
    return step


def _measurement_for(model: SystemModel, measurement: Measurement | None) -> Measurement:
    expected = MEASUREMENT_FOR_MODE[model.mode]
    if measurement is None:
        return expected
    if measurement != expected:
        raise ConfigError(f"{measurement} measurement does not match {model.mode} mode")
    return measurement


def oracle_batch(
    model: SystemModel,
    strategy: ControlStrategy,
    T: float,
    dt: float,
    seed: int,
    indices,
    measurement: Measurement | None = None,
) -> TrajectoryBatch:
    """
    Repeated-interaction trajectories. Kraus operators are built once per
    distinct control value and reused.
    """
    measurement = _measurement_for(model, measurement)
    indices = np.asarray(indices, dtype=int)
    steps = n_steps(T, dt)
    n, d = indices.size, model.dim
    uniforms = np.array([trajectory_rng(seed, i).random(steps) for i in indices]).reshape(n, steps)

    rho = np.broadcast_to(np.asarray(model.rho0, dtype=np.complex128), (n, d, d)).copy()
    rho_path = np.empty((n, steps + 1, d, d), dtype=np.complex128)
    rho_path[:, 0] = rho
    dY = np.zeros((n, steps))
    u_path = np.zeros((n, steps))
    innovations = np.zeros((n, steps))
    cache: dict[float, StepKraus] = {}

    for k in range(steps):
        u = query_controls(strategy, model, k, k * dt, rho, dY[:, :k])
        if model.mode == "diffusive":
            compensator = observation_drift(rho, u, model) * dt
        else:
            compensator = jump_intensity(model, rho, u) * dt

        new = np.empty_like(rho)
        for value in np.unique(u):
            if value not in cache:
                cache[value] = build_step(model, value, dt, measurement)
            step = cache[value]
            rows = np.flatnonzero(u == value)
            probs = step.probabilities(rho[rows])
            outcome = (uniforms[rows, k] >= probs[:, 0]).astype(int)
            m = step.operators[outcome]
            post = m @ rho[rows] @ np.conj(np.swapaxes(m, -1, -2))
            post = 0.5 * (post + np.conj(np.swapaxes(post, -1, -2)))
            new[rows] = post / np.real(np.trace(post, axis1=-2, axis2=-1))[:, None, None]
            dY[rows, k] = step.dy[outcome]

        rho = new
        if model.mode == "diffusive":
            innovations[:, k] = dY[:, k] - compensator
        else:
            innovations[:, k] = model.coeffs.xi(u) * (dY[:, k] - compensator)
        u_path[:, k] = u
        rho_path[:, k + 1] = rho

    return TrajectoryBatch(
        times=np.arange(steps + 1) * dt,
        dY=dY,
        rho_path=rho_path,
        u_path=u_path,
        innovations=innovations,
        indices=indices,
        mode=model.mode,
        seed=int(seed),
    )


def oracle_trajectory(model: SystemModel, strategy: ControlStrategy, T: float, dt: float, seed: int, measurement: Measurement | None = None, index: int = 0) -> TrajectoryRecord:
    return oracle_batch(model, strategy, T, dt, seed, [index], measurement).record(0)


def compare_with_filter(
    model: SystemModel,
    strategy: ControlStrategy,
    T: float,
    dt: float,
    n_seeds: int,
    seed: int = 0,
    measurement: Measurement | None = None,
    scheme: str = "euler",
) -> np.ndarray:
    """
    Terminal trace distance between the oracle's conditional state and the
    filter run on the oracle's own observation record and controls.
    """
    batch = oracle_batch(model, strategy, T, dt, seed, np.arange(n_seeds), measurement)
    filtered = filter_record(model, batch.dY, batch.u_path, dt, scheme, batch.rho_path[0, 0])
    return mc.trace_distance(batch.rho_path[:, -1], filtered[:, -1])


def convergence_report(
    model: SystemModel,
    strategy: ControlStrategy,
    T: float,
    dts,
    n_seeds: int,
    seed: int = 0,
    measurement: Measurement | None = None,
    scheme: str = "euler",
    max_ratio: float = 0.6,
) -> OracleReport:
    measurement = _measurement_for(model, measurement)
    rows = []
    for dt in sorted(dts, reverse=True):
        dist = compare_with_filter(model, strategy, T, dt, n_seeds, seed, measurement, scheme)
        rows.append(OracleRow(dt=dt, median=float(np.median(dist)), max=float(np.max(dist)), distances=dist.tolist()))
        logger.info(f"oracle {measurement} dt={dt:g}: median trace distance {rows[-1].median:.3e}")

    medians = [r.median for r in rows]
    ratios = [b / a if a > 0 else 0.0 for a, b in zip(medians, medians[1:])]
    passed = all(r <= max_ratio for r in ratios) if max(medians) > 1e-12 else True
    return OracleReport(
        mode=model.mode,
        measurement=measurement,
        strategy=strategy.name,
        scheme=scheme,
        rows=rows,
        ratios=ratios,
        max_ratio=max_ratio,
        passed=passed,
    )
