"""
Monte Carlo evaluation of the expected total cost and the comparison of
control strategies on common random numbers.
"""
import itertools
import logging
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from bellman.model import ValueFunction
from bellman.service import extract_policy
from core.config import CHUNK_SIZE
from core.exceptions import ConfigError
from mc.model import ComparisonReport, ConsistencyReport, CostEstimate, PairwiseRow, ProbeRow
from model.model import CostSpec, SystemModel
from model.service import matrix_to_bloch
from model.strategies import ControlStrategy
from sme.model import TrajectoryBatch, TrajectoryRecord
from sme.service import run_ensemble

logger = logging.getLogger("mc")

DEFAULT_PROBES = 5
MIN_PROBE_SAMPLES = 30


def trajectory_costs(batch: TrajectoryBatch) -> np.ndarray:
    """Left-endpoint total cost sum_k Tr[rho_k C(u_k)] dt + Tr[rho_T C_T] per trajectory."""
    return batch.running_costs.sum(axis=1) * batch.dt + batch.terminal_costs


class CostSamples:
    """Reducer: total costs, plus filter states and costs-to-go at probe steps."""

    def __init__(self, probe_steps: Sequence[int] = ()):
        self.probe_steps = list(probe_steps)

    def __call__(self, batch: TrajectoryBatch):
        totals = trajectory_costs(batch)
        if not self.probe_steps:
            return totals, None, None
        theta = matrix_to_bloch(batch.rho_path[:, self.probe_steps])
        tail = np.cumsum(batch.running_costs[:, ::-1], axis=1)[:, ::-1] * batch.dt
        tail = np.concatenate([tail, np.zeros((batch.n, 1))], axis=1)
        ctg = tail[:, self.probe_steps] + batch.terminal_costs[:, None]
        return totals, theta, ctg


def cost_to_go(trajectory: TrajectoryRecord, cost: CostSpec, t_index: int) -> float:
    """sum_{k >= t_index} Tr[rho_k C(u_k)] dt + Tr[rho_T C_T]."""
    steps = trajectory.n_steps
    if not 0 <= t_index <= steps:
        raise ConfigError(f"t_index {t_index} out of range [0, {steps}]")
    rho = trajectory.rho_path
    running = cost.running_expectation(rho[t_index:steps], trajectory.u_path[t_index:])
    terminal = cost.terminal_expectation(rho[-1:])[0]
    return float(running.sum() * trajectory.dt + terminal)


def estimate(name: str, variant: str, costs: np.ndarray) -> CostEstimate:
    n = costs.size
    if n < 2:
        raise ConfigError("need at least 2 trajectories for a cost estimate")
    return CostEstimate(
        name=name,
        variant=variant,
        mean=float(np.mean(costs)),
        stderr=float(np.std(costs, ddof=1) / np.sqrt(n)),
        n=n,
        costs=costs.tolist(),
    )


def _collect(model, strategy, cost, T, dt, n, seed, scheme, jobs, probe_steps=(), chunk_size=CHUNK_SIZE):
    parts = run_ensemble(
        model,
        strategy,
        T,
        dt,
        n,
        seed,
        reducer=CostSamples(probe_steps),
        scheme=scheme,
        cost=cost,
        jobs=jobs,
        chunk_size=chunk_size,
    )
    totals = np.concatenate([p[0] for p in parts])
    if not probe_steps:
        return totals, None, None
    return totals, np.concatenate([p[1] for p in parts]), np.concatenate([p[2] for p in parts])


def evaluate_cost(
    model: SystemModel,
    strategy: ControlStrategy,
    cost: CostSpec,
    T: float,
    dt: float,
    n: int,
    seed: int,
    scheme: str = "kraus",
    jobs: int | None = None,
    chunk_size: int = CHUNK_SIZE,
) -> CostEstimate:
    totals, _, _ = _collect(model, strategy, cost, T, dt, n, seed, scheme, jobs, chunk_size=chunk_size)
    result = estimate(strategy.name, strategy.variant, totals)
    logger.info(f"{strategy.name}: J = {result.mean:.5f} +- {result.stderr:.5f} (n={n})")
    return result


def pairwise(estimates: list[CostEstimate]) -> list[PairwiseRow]:
    """
    Differences on common random numbers: the stderr is that of the paired
    per-trajectory differences. CIs are +-2 stderr; `overlap` reports whether
    the two strategies' own CIs intersect.
    """
    rows = []
    for a, b in itertools.combinations(estimates, 2):
        diff = np.asarray(a.costs) - np.asarray(b.costs)
        se = float(np.std(diff, ddof=1) / np.sqrt(diff.size))
        mean = float(np.mean(diff))
        rows.append(
            PairwiseRow(
                a=a.name,
                b=b.name,
                difference=mean,
                stderr=se,
                ci_low=mean - 2 * se,
                ci_high=mean + 2 * se,
                overlap=bool(abs(a.mean - b.mean) <= 2 * (a.stderr + b.stderr)),
            )
        )
    return rows


def separated_wins(estimates: list[CostEstimate]) -> tuple[Optional[str], Optional[bool]]:
    """
    The separated strategy wins when its mean is at most every other panel
    member's mean minus twice the pooled standard error.
    """
    separated = [e for e in estimates if e.variant == "separated"]
    if not separated:
        return None, None
    best = separated[0]
    for other in estimates:
        if other is best:
            continue
        pooled = np.hypot(best.stderr, other.stderr)
        if best.mean > other.mean - 2 * pooled:
            return best.name, False
    return best.name, True


def compare_strategies(
    model: SystemModel,
    cost: CostSpec,
    strategies: Sequence[ControlStrategy],
    T: float,
    dt: float,
    n: int,
    seed: int,
    scheme: str = "kraus",
    jobs: int | None = None,
) -> ComparisonReport:
    """
    Every strategy runs trajectories 0..n-1 of the same seed, so trajectory i
    sees the same noise stream under every strategy.
    """
    if not strategies:
        raise ConfigError("empty strategy panel")
    names = [s.name for s in strategies]
    if len(set(names)) != len(names):
        raise ConfigError("strategy names must be unique")

    estimates = [evaluate_cost(model, s, cost, T, dt, n, seed, scheme, jobs) for s in strategies]
    ranking = [e.name for e in sorted(estimates, key=lambda e: e.mean)]
    sep_name, wins = separated_wins(estimates)
    return ComparisonReport(
        T=T,
        dt=dt,
        n=n,
        seed=seed,
        ranking=ranking,
        estimates=estimates,
        pairwise=pairwise(estimates),
        separated=sep_name,
        separated_wins=wins,
    )


def costs_frame(report: ComparisonReport) -> pd.DataFrame:
    frames = [
        pd.DataFrame({"strategy": e.name, "trajectory": np.arange(e.n), "cost": e.costs})
        for e in report.estimates
    ]
    return pd.concat(frames, ignore_index=True)


def value_consistency(
    model: SystemModel,
    cost: CostSpec,
    vf: ValueFunction,
    n: int,
    seed: int,
    dt: Optional[float] = None,
    scheme: str = "kraus",
    jobs: int | None = None,
    eps_disc: Optional[float] = None,
    n_probes: int = DEFAULT_PROBES,
) -> ConsistencyReport:
    """
    (a) MC mean cost of the extracted policy against V(0, rho0).
    (b) At probe times, the average cost-to-go of trajectories whose filter
        state lies within one grid spacing of a node, against the average of
        V(t, .) at the same filter states.
    """
    T = float(vf.times[-1])
    dt = dt or vf.dt
    policy = extract_policy(vf)
    steps = int(round(T / dt))
    probe_steps = sorted({int(round(f * steps)) for f in np.linspace(0.2, 0.8, n_probes)})

    totals, theta, ctg = _collect(model, policy, cost, T, dt, n, seed, scheme, jobs, probe_steps)
    est = estimate(policy.name, policy.variant, totals)
    eps = float(eps_disc if eps_disc is not None else (vf.eps_disc or 0.0))
    v0 = float(vf.value(0, matrix_to_bloch(np.asarray(model.rho0)[None]))[0])
    diff = abs(est.mean - v0)
    tol = 2 * est.stderr + eps + 1e-12

    probes = []
    radius = vf.grid.h
    for p, k in enumerate(probe_steps):
        t = k * dt
        slice_k = vf.slice_index(t)
        if np.any(np.isnan(vf.values[slice_k])):
            continue
        states = theta[:, p]
        centre = vf.grid.nodes[np.argmin(np.linalg.norm(vf.grid.nodes - states.mean(axis=0), axis=1))]
        members = np.linalg.norm(states - centre, axis=1) <= radius
        count = int(members.sum())
        if count < MIN_PROBE_SAMPLES:
            probes.append(ProbeRow(t=t, theta=centre.tolist(), radius=radius, count=count, cost_to_go=float("nan"), stderr=float("nan"), value=float("nan")))
            continue
        samples = ctg[members, p]
        se = float(np.std(samples, ddof=1) / np.sqrt(count))
        value = float(np.mean(vf.value(slice_k, states[members])))
        probes.append(
            ProbeRow(
                t=t,
                theta=centre.tolist(),
                radius=radius,
                count=count,
                cost_to_go=float(np.mean(samples)),
                stderr=se,
                value=value,
                passed=bool(abs(np.mean(samples) - value) <= 2 * se + eps + 1e-12),
            )
        )

    evaluated = [row.passed for row in probes if row.passed is not None]
    report = ConsistencyReport(
        v0=v0,
        mc_mean=est.mean,
        mc_stderr=est.stderr,
        eps_disc=eps,
        difference=diff,
        tolerance=tol,
        passed=bool(diff <= tol),
        probes=probes,
        probes_evaluated=len(evaluated),
        probes_passed=bool(evaluated) and all(evaluated),
    )
    logger.info(f"value consistency: |J - V(0)| = {diff:.4g}, tolerance {tol:.4g}")
    return report
