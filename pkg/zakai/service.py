"""
Linear (unnormalized) filters driven by a recorded observation path and the
normalization check against the nonlinear filter.
"""
import logging

import numpy as np

from core.config import KS_MIN_ORDER, KS_RATIO_BAND, UPSILON_MIN, XI_MIN
from core.exceptions import ConfigError, NumericalError
from model.model import SystemModel, as_controls
from model.strategies import ControlStrategy
from sme.model import TrajectoryBatch, TrajectoryRecord
from sme.service import lindblad_generator, simulate_batch
from zakai.model import KsReport, KsRow, LinearPath

logger = logging.getLogger("zakai")

DEFAULT_RESCALE_EVERY = 50


def _stack(tau):
    tau = np.asarray(tau, dtype=np.complex128)
    return (tau[None], True) if tau.ndim == 2 else (tau, False)


def _dag(a):
    return np.conj(np.swapaxes(a, -1, -2))


def step_linear_diffusive(model: SystemModel, tau, u, dt: float, dY, upsilon_min: float = UPSILON_MIN) -> np.ndarray:
    """tau' = tau + L(u) tau dt + (G tau + tau G*) dY with G = L / Upsilon."""
    tau, single = _stack(tau)
    n = tau.shape[0]
    u = np.broadcast_to(as_controls(u), (n,))
    dY = np.broadcast_to(np.asarray(dY, dtype=float), (n,))
    c = model.coeffs
    ups = c.upsilon(u)
    if np.any(np.abs(ups) < upsilon_min):
        raise NumericalError(f"|Upsilon(u)| below {upsilon_min}")
    l = c.l(u)
    g = (1.0 / ups)[:, None, None] * l
    new = tau + lindblad_generator(tau, c.h(u), l) * dt + (g @ tau + tau @ _dag(g)) * dY[:, None, None]
    return new[0] if single else new


def step_linear_jump(model: SystemModel, tau, u, dt: float, jumped, xi_min: float = XI_MIN) -> np.ndarray:
    """
    tau' = tau + (L(u) tau - Xi^-2 (B tau B* - tau)) dt + (B tau B* - tau) dN
    with dN the 0/1 jump indicator.
    """
    tau, single = _stack(tau)
    n = tau.shape[0]
    u = np.broadcast_to(as_controls(u), (n,))
    dn = np.broadcast_to(np.asarray(jumped, dtype=float), (n,))
    c = model.coeffs
    xi = c.xi(u)
    if np.any(np.abs(xi) < xi_min):
        raise NumericalError(f"|Xi(u)| below {xi_min}")
    b = c.b(u)
    kernel = b @ tau @ _dag(b) - tau
    drift = lindblad_generator(tau, c.h(u), c.l(u)) - kernel / (xi**2)[:, None, None]
    new = tau + drift * dt + kernel * dn[:, None, None]
    return new[0] if single else new


def integrate_linear(model: SystemModel, dY, u_path, dt: float, rho0=None, rescale_every: int = DEFAULT_RESCALE_EVERY) -> LinearPath:
    """
    Run the linear filter along observation records dY (n, N) with controls u_path (n, N).
    Every `rescale_every` steps tau is divided by its trace and the log of the
    factor is accumulated.
    """
    dY = np.atleast_2d(np.asarray(dY, dtype=float))
    u_path = np.atleast_2d(np.asarray(u_path, dtype=float))
    n, steps = dY.shape
    d = model.dim
    rho0 = model.rho0 if rho0 is None else rho0

    tau = np.broadcast_to(np.asarray(rho0, dtype=np.complex128), (n, d, d)).copy()
    path = np.empty((n, steps + 1, d, d), dtype=np.complex128)
    log_scale = np.zeros((n, steps + 1))
    path[:, 0] = tau
    acc = np.zeros(n)

    for k in range(steps):
        if model.mode == "diffusive":
            tau = step_linear_diffusive(model, tau, u_path[:, k], dt, dY[:, k])
        else:
            tau = step_linear_jump(model, tau, u_path[:, k], dt, dY[:, k])

        tr = np.real(np.trace(tau, axis1=-2, axis2=-1))
        if np.any(~(tr > 0)):
            raise NumericalError(f"Tr tau not positive at step {k + 1}")
        if rescale_every and (k + 1) % rescale_every == 0:
            tau = tau / tr[:, None, None]
            acc = acc + np.log(tr)
        path[:, k + 1] = tau
        log_scale[:, k + 1] = acc
    return LinearPath(tau=path, log_scale=log_scale)


def ks_discrepancies(batch: TrajectoryBatch, model: SystemModel, rescale_every: int = DEFAULT_RESCALE_EVERY) -> np.ndarray:
    """Per trajectory: max over the grid of max |tau_t / Tr tau_t - rho_t|."""
    if batch.mode != model.mode:
        raise ConfigError(f"trajectory mode '{batch.mode}' does not match model mode '{model.mode}'")
    linear = integrate_linear(model, batch.dY, batch.u_path, batch.dt, batch.rho_path[:, 0], rescale_every)
    diff = np.abs(linear.normalized() - batch.rho_path)
    return diff.reshape(batch.n, -1).max(axis=1)


def ks_check(trajectory: TrajectoryRecord, model: SystemModel, rescale_every: int = DEFAULT_RESCALE_EVERY) -> float:
    if trajectory.mode != model.mode:
        raise ConfigError(f"trajectory mode '{trajectory.mode}' does not match model mode '{model.mode}'")
    linear = integrate_linear(model, trajectory.dY, trajectory.u_path, trajectory.dt, trajectory.rho_path[0], rescale_every)
    return float(np.max(np.abs(linear.normalized()[0] - trajectory.rho_path)))


def fitted_order(dts, errors) -> float:
    """Slope of log(error) against log(dt)."""
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if np.any(errors <= 0):
        return float("inf") if np.all(errors <= 0) else float("nan")
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])


def halving_ratios(dts, errors) -> list[float]:
    """
    Error ratio between consecutive grids, rescaled to one halving of dt:
    (e_k / e_{k+1}) ** (log 2 / log(dt_k / dt_{k+1})). First order gives 2.
    """
    out = []
    for (dt_a, e_a), (dt_b, e_b) in zip(zip(dts, errors), zip(dts[1:], errors[1:])):
        if e_b <= 0:
            out.append(float("inf"))
            continue
        out.append(float((e_a / e_b) ** (np.log(2.0) / np.log(dt_a / dt_b))))
    return out


def refinement_passed(order: float, ratios, min_order: float = KS_MIN_ORDER, ratio_band: tuple[float, float] = KS_RATIO_BAND) -> bool:
    lo, hi = ratio_band
    return bool(order >= min_order and all(lo <= r <= hi for r in ratios))


def ks_refinement(
    model: SystemModel,
    strategy: ControlStrategy,
    T: float,
    dts,
    n_seeds: int,
    seed: int = 0,
    scheme: str = "euler",
    increments: str = "binary",
    min_order: float = KS_MIN_ORDER,
    ratio_band: tuple[float, float] = KS_RATIO_BAND,
) -> KsReport:
    """
    Grid-refinement table of the normalization discrepancy: for each dt, the
    median over trajectories 0..n_seeds-1 and the fitted order.
    Passing needs order >= min_order and every per-halving ratio inside ratio_band.
    A table whose discrepancies all vanish passes trivially.
    """
    rows = []
    for dt in sorted(dts, reverse=True):
        batch = simulate_batch(model, strategy, T, dt, seed, np.arange(n_seeds), scheme, increments)
        disc = ks_discrepancies(batch, model)
        rows.append(KsRow(dt=dt, median=float(np.median(disc)), max=float(disc.max()), discrepancies=disc.tolist()))
        logger.info(f"ks dt={dt:g}: median {rows[-1].median:.3e}")

    dts = [r.dt for r in rows]
    medians = [r.median for r in rows]
    ratios = halving_ratios(dts, medians)
    if max(medians) <= 1e-12:
        order, passed = float("inf"), True
    else:
        order = fitted_order(dts, medians)
        passed = refinement_passed(order, ratios, min_order, ratio_band)

    return KsReport(
        mode=model.mode,
        strategy=strategy.name,
        increments=increments,
        rows=rows,
        order=order,
        ratios=ratios,
        min_order=min_order,
        ratio_band=ratio_band,
        passed=passed,
    )
