import argparse
import logging
import sys

from core.exceptions import QsepException
from core.log import setup_logging
from core.router import include_router

from sme.router import router as sme_router
from verify.router import router as verify_router
from bellman.router import router as bellman_router
from mc.router import router as mc_router

logger = logging.getLogger("main")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsep", description="Controlled quantum filtering and separated control")
    subparsers = parser.add_subparsers(dest="command", required=True)

    include_router(subparsers, sme_router)
    include_router(subparsers, verify_router)
    include_router(subparsers, bellman_router)
    include_router(subparsers, mc_router)
    return parser


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except QsepException as e:
        logger.error(e.detail)
        return e.status_code


if __name__ == "__main__":
    sys.exit(main())
