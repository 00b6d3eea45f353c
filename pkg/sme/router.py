import logging

import numpy as np

import storage
from core.dependencies import get_run_context
from core.manifest import write_manifest
from core.router import CommandRouter, arg
from lindblad.service import integrate, path_frame
from model.service import matrix_to_bloch
from model.strategies import BangBangFeedback, ConstantControl, OpenLoop, RandomSchedule
from sme.service import (
    BlochMoments,
    ensemble_bloch_stats,
    ensemble_summary,
    run_ensemble,
    simulate_batch,
    trajectory_frame,
)
from zakai.service import ks_discrepancies

logger = logging.getLogger("sme")

router = CommandRouter(tags=["Simulate"])

STRATEGIES = ("constant", "randomized", "bang-bang")


def make_strategy(kind: str, u: float, model, seed: int):
    if kind == "constant":
        return ConstantControl(u)
    if kind == "randomized":
        return RandomSchedule(model.range.grid, seed)
    return BangBangFeedback(model.range.u_max)


@router.command(
    "simulate",
    help="generate filter trajectories and an ensemble summary",
    arguments=[
        arg("--strategy", choices=STRATEGIES, default="constant"),
        arg("--u", type=float, default=0.0, help="control value for --strategy constant"),
    ],
)
def cmd_simulate(args) -> int:
    ctx = get_run_context(args, "simulate")
    model, run = ctx.model, ctx.config.run
    strategy = make_strategy(args.strategy, args.u, model, run.seed)
    logger.info(f"simulating {run.n_traj} trajectories of {model.name} ({model.mode}) under {strategy.name}")

    parts = run_ensemble(
        model, strategy, run.T, run.dt, run.n_traj, run.seed,
        reducer=BlochMoments(), scheme=run.scheme, increments=run.increments,
        jobs=ctx.jobs,
    )
    mean, stderr, n = ensemble_bloch_stats(parts)
    times = np.arange(mean.shape[0]) * run.dt

    summary = {
        "model": model.name,
        "mode": model.mode,
        "scheme": run.scheme,
        "increments": run.increments,
        "strategy": strategy.name,
        "n": n,
        "T": run.T,
        "dt": run.dt,
    }

    if isinstance(strategy, OpenLoop):
        path = integrate(model, strategy.as_function(run.dt), model.rho0, run.T, run.dt)
        storage.upload_frame(ctx.out_dir, "lindblad.csv", path_frame(times, path))
        summary["probes"] = ensemble_summary(times, mean, stderr, matrix_to_bloch(path), ctx.config.verify.probe_times, n)

    n_csv = min(run.n_csv, run.n_traj)
    if n_csv:
        batch = simulate_batch(model, strategy, run.T, run.dt, run.seed, np.arange(n_csv), run.scheme, run.increments)
        for record in batch.records():
            storage.upload_frame(ctx.out_dir, f"trajectories/trajectory_{record.index:05d}.csv", trajectory_frame(record))
        summary["ks"] = {
            "trajectories": batch.indices.tolist(),
            "discrepancy": ks_discrepancies(batch, model).tolist(),
        }

    storage.upload_json(ctx.out_dir, "ensemble.json", summary)
    write_manifest(ctx)
    return 0
