"""
Acceptance suites: the Lindblad oracle, the normalization identity, the
innovations martingale property and the repeated-interaction oracle.
"""
import logging

import numpy as np

from lindblad.service import integrate, propagate_exact
from matcore import service as mc
from model.model import CostSpec, SystemModel
from model.schemas import RunConfig
from model.service import matrix_to_bloch
from model.strategies import BangBangFeedback, ConstantControl
from oracle.service import convergence_report
from sme.service import (
    BlochMoments,
    ensemble_bloch_stats,
    innovations_martingale_stat,
    keep_observations,
    run_ensemble,
)
from verify.model import Check, SuiteReport
from zakai.service import ks_refinement

logger = logging.getLogger("verify")

SUITES = ("lindblad", "ks", "innovations", "oracle")

CLOSED_FORM_TOL = 1e-8
INVARIANT_TOL = 1e-10


def panel(model: SystemModel):
    """Open-loop and path-feedback strategies every suite runs under."""
    return [ConstantControl(0.0), BangBangFeedback(model.range.u_max)]


def _ensemble_size(config: RunConfig) -> int:
    return config.verify.ensemble_size or config.run.n_traj


def lindblad_suite(model: SystemModel, config: RunConfig, jobs: int | None = None) -> list[Check]:
    run = config.run
    path = integrate(model, None, model.rho0, run.T, run.dt)
    times = np.arange(path.shape[0]) * run.dt
    checks = []

    exact = propagate_exact(model, 0.0, model.rho0, times[-1:])[0]
    err = float(np.max(np.abs(path[-1] - exact)))
    checks.append(Check(name="rk4_vs_exact", passed=err <= CLOSED_FORM_TOL, detail=f"max |rk4 - expm| = {err:.2e}"))

    if model.name in ("decay_homodyne", "decay_counting"):
        gamma = float(model.params.get("gamma", 1.0))
        expected = np.real(model.rho0[0, 0]) * np.exp(-gamma * run.T)
        err = abs(float(np.real(path[-1, 0, 0])) - expected)
        checks.append(Check(name="excited_decay", passed=err <= CLOSED_FORM_TOL, detail=f"rho_ee(T) = {np.real(path[-1, 0, 0]):.10f}, expected {expected:.10f}"))

    trace_err = float(np.max(np.abs(np.trace(path, axis1=-2, axis2=-1) - 1.0)))
    min_eig = float(np.min(np.linalg.eigvalsh(mc.hermitian_part(path))))
    checks.append(
        Check(
            name="trace_positivity",
            passed=trace_err <= INVARIANT_TOL and min_eig >= -INVARIANT_TOL,
            detail=f"trace error {trace_err:.2e}, min eigenvalue {min_eig:.2e}",
        )
    )

    if model.dim == 2:
        n = _ensemble_size(config)
        parts = run_ensemble(model, ConstantControl(0.0), run.T, run.dt, n, run.seed, BlochMoments(), run.scheme, run.increments, jobs=jobs)
        mean, stderr, _ = ensemble_bloch_stats(parts)
        reference = matrix_to_bloch(path)
        rows = []
        ok = True
        for t in config.verify.probe_times:
            k = int(round(t / run.dt))
            if k >= times.size:
                continue
            dev = np.abs(mean[k] - reference[k])
            within = bool(np.all(dev <= 3 * stderr[k] + 1e-12))
            ok &= within
            rows.append({"t": t, "mean": mean[k].tolist(), "stderr": stderr[k].tolist(), "lindblad": reference[k].tolist()})
        checks.append(Check(name="ensemble_invariance", passed=ok, detail=f"{n} trajectories, {run.scheme} scheme", data={"probes": rows}))
    return checks


def ks_suite(model: SystemModel, config: RunConfig, jobs: int | None = None) -> list[Check]:
    v = config.verify
    checks = []
    for strategy in panel(model):
        report = ks_refinement(
            model,
            strategy,
            config.run.T,
            v.dt_grid,
            v.n_seeds,
            config.run.seed,
            scheme="euler",
            increments="binary",
            min_order=v.ks_min_order,
            ratio_band=v.ks_ratio_band,
        )
        checks.append(
            Check(
                name=f"ks_order[{strategy.name}]",
                passed=report.passed,
                detail=f"fitted order {report.order:.3f} (min {v.ks_min_order}), halving ratios {[round(r, 2) for r in report.ratios]}",
                data=report.model_dump(),
            )
        )
    return checks


def innovations_suite(model: SystemModel, config: RunConfig, jobs: int | None = None) -> list[Check]:
    run = config.run
    strategy = BangBangFeedback(model.range.u_max)
    n = _ensemble_size(config)
    parts = run_ensemble(model, strategy, run.T, run.dt, n, run.seed, keep_observations, run.scheme, run.increments, jobs=jobs)

    checks = []
    for s, t in config.verify.innovation_windows:
        stats = innovations_martingale_stat(parts, s, t)
        for name, (mean, stderr) in stats.items():
            checks.append(
                Check(
                    name=f"martingale[{s:g},{t:g}][{name}]",
                    passed=abs(mean) <= 3 * stderr,
                    detail=f"mean {mean:.3e}, stderr {stderr:.3e}",
                    data={"mean": mean, "stderr": stderr, "n": n},
                )
            )
    return checks


def oracle_suite(model: SystemModel, config: RunConfig, jobs: int | None = None) -> list[Check]:
    v = config.verify
    checks = []
    for strategy in panel(model):
        report = convergence_report(
            model,
            strategy,
            config.run.T,
            v.oracle_dts,
            v.n_seeds,
            config.run.seed,
            scheme="euler",
            max_ratio=v.oracle_max_ratio,
        )
        checks.append(
            Check(
                name=f"oracle_convergence[{report.measurement}][{strategy.name}]",
                passed=report.passed,
                detail="ratios " + ", ".join(f"{r:.3f}" for r in report.ratios),
                data=report.model_dump(),
            )
        )
    return checks


SUITE_RUNNERS = {
    "lindblad": lindblad_suite,
    "ks": ks_suite,
    "innovations": innovations_suite,
    "oracle": oracle_suite,
}


def run_suite(which: str, model: SystemModel, cost: CostSpec, config: RunConfig, jobs: int | None = None) -> SuiteReport:
    checks = SUITE_RUNNERS[which](model, config, jobs)
    report = SuiteReport(suite=which, model=model.name, mode=model.mode, checks=checks)
    for c in checks:
        (logger.info if c.passed else logger.warning)(f"{which}/{c.name}: {'pass' if c.passed else 'FAIL'} ({c.detail})")
    return report
