import logging

import storage
from core.dependencies import get_run_context
from core.exceptions import CheckFailed
from core.manifest import write_manifest
from core.router import CommandRouter, arg
from verify.service import SUITES, run_suite

logger = logging.getLogger("verify")

router = CommandRouter(tags=["Verify"])


@router.command(
    "verify",
    help="run an acceptance suite and write its report",
    arguments=[arg("which", choices=SUITES + ("all",))],
)
def cmd_verify(args) -> int:
    ctx = get_run_context(args, "verify")
    suites = SUITES if args.which == "all" else (args.which,)

    failed = []
    for which in suites:
        report = run_suite(which, ctx.model, ctx.cost, ctx.config, ctx.jobs)
        storage.upload_json(ctx.out_dir, f"verify_{which}.json", report)
        failed += [f"{which}/{name}" for name in report.failed()]

    write_manifest(ctx, exit_code=1 if failed else 0)
    if failed:
        raise CheckFailed("failed checks: " + ", ".join(failed))
    return 0
