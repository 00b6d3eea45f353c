import argparse
from dataclasses import dataclass, field
from typing import Any, Callable


@dataclass
class Command:
    name: str
    handler: Callable[[argparse.Namespace], int]
    help: str = ""
    arguments: list[tuple[tuple, dict]] = field(default_factory=list)


class CommandRouter:
    """
    Collects subcommands the way an APIRouter collects endpoints;
    main.py includes every router into one argparse parser.
    """

    def __init__(self, tags: list[str] | None = None):
        self.tags = tags or []
        self.commands: list[Command] = []

    def command(self, name: str, help: str = "", arguments: list[tuple[tuple, dict]] | None = None):
        def decorator(fn: Callable[[argparse.Namespace], int]):
            self.commands.append(Command(name, fn, help, arguments or []))
            return fn

        return decorator


def arg(*flags: str, **kwargs: Any) -> tuple[tuple, dict]:
    return flags, kwargs


def common_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("config", help="run configuration (JSON)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a configuration field, e.g. run.dt=1e-3",
    )
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--jobs", type=int, default=None, help="worker cap (default $QSEP_JOBS)")
    parser.add_argument("--out", default=None, help="output directory")


def include_router(subparsers, router: CommandRouter):
    for cmd in router.commands:
        p = subparsers.add_parser(cmd.name, help=cmd.help)
        common_arguments(p)
        for flags, kwargs in cmd.arguments:
            p.add_argument(*flags, **kwargs)
        p.set_defaults(handler=cmd.handler)
