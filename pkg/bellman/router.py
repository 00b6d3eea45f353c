import logging

import storage
from bellman.model import StateGrid
from bellman.service import discretization_estimate, hjb_residual, random_cell_midpoints, save_value_function, solve
from core.dependencies import RunContext, get_run_context
from core.exceptions import CheckFailed
from core.manifest import write_manifest
from core.router import CommandRouter

logger = logging.getLogger("bellman")

router = CommandRouter(tags=["Bellman"])

RESIDUAL_POINTS = 100


def solve_for_context(ctx: RunContext):
    section = ctx.config.bellman
    vf = solve(ctx.model, ctx.cost, StateGrid(section.grid_n), ctx.config.run.T, section.time_steps)
    if section.estimate_error:
        vf = vf.with_eps_disc(discretization_estimate(ctx.model, ctx.cost, vf))
    return vf


@router.command("bellman", help="solve the dynamic programming problem and save the value function")
def cmd_bellman(args) -> int:
    ctx = get_run_context(args, "bellman")
    vf = solve_for_context(ctx)
    save_value_function(vf, ctx.out_dir, ctx.config.bellman.save_every)

    sample = random_cell_midpoints(vf.grid, RESIDUAL_POINTS, ctx.seed)
    residual = hjb_residual(vf, ctx.model, ctx.cost, sample)
    storage.upload_json(ctx.out_dir, "residual.json", residual)
    logger.info(f"HJB residual: min condition-3 {residual.min_condition3:.3e}, band {residual.band:.3e}")

    write_manifest(ctx, exit_code=0 if residual.passed else 1)
    if not residual.passed:
        raise CheckFailed("HJB residual outside the discretization band")
    return 0
