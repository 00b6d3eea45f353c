import logging

import storage
from bellman.router import solve_for_context
from bellman.service import extract_policy, load_value_function, save_value_function
from core.dependencies import get_run_context
from core.exceptions import CheckFailed
from core.manifest import write_manifest
from core.router import CommandRouter, arg
from mc.service import compare_strategies, costs_frame, value_consistency
from model.strategies import BangBangFeedback, ConstantControl, RandomSchedule

logger = logging.getLogger("mc")

router = CommandRouter(tags=["Compare"])

PANEL = ("separated", "zero", "max", "min", "randomized", "bang-bang")


def build_panel(names, model, vf, seed: int):
    u_max = model.range.u_max
    makers = {
        "separated": lambda: extract_policy(vf),
        "zero": lambda: ConstantControl(0.0),
        "max": lambda: ConstantControl(u_max),
        "min": lambda: ConstantControl(-u_max),
        "randomized": lambda: RandomSchedule(model.range.grid, seed),
        "bang-bang": lambda: BangBangFeedback(u_max),
    }
    return [makers[name]() for name in names]


@router.command(
    "compare",
    help="compare the separated policy against a strategy panel",
    arguments=[
        arg("--value-function", dest="value_function", default=None, help="directory of a saved value function"),
        arg("--panel", nargs="+", choices=PANEL, default=list(PANEL)),
    ],
)
def cmd_compare(args) -> int:
    ctx = get_run_context(args, "compare")
    run = ctx.config.run

    if args.value_function:
        vf = load_value_function(args.value_function)
    else:
        vf = solve_for_context(ctx)
        save_value_function(vf, ctx.out_dir, ctx.config.bellman.save_every)

    strategies = build_panel(args.panel, ctx.model, vf, run.seed)
    report = compare_strategies(ctx.model, ctx.cost, strategies, run.T, run.dt, run.n_traj, run.seed, run.scheme, ctx.jobs)
    storage.upload_json(ctx.out_dir, "comparison.json", report)
    storage.upload_frame(ctx.out_dir, "costs.csv", costs_frame(report))
    logger.info("ranking: " + " < ".join(report.ranking))

    failures = []
    if report.separated is not None:
        consistency = value_consistency(ctx.model, ctx.cost, vf, run.n_traj, run.seed, run.dt, run.scheme, ctx.jobs)
        storage.upload_json(ctx.out_dir, "consistency.json", consistency)
        if not report.separated_wins:
            failures.append("separated policy does not beat the panel")
        if not consistency.passed:
            failures.append("MC mean differs from V(0, rho0)")

    write_manifest(ctx, exit_code=1 if failures else 0)
    if failures:
        raise CheckFailed("; ".join(failures))
    return 0
