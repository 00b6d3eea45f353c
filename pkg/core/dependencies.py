import argparse
import os
from dataclasses import dataclass
from datetime import datetime

import storage
from core.config import DEFAULT_JOBS, OUTPUT_DIR
from core.exceptions import ConfigError
from model.model import CostSpec, SystemModel
from model.schemas import RunConfig
from model.service import config_hash, emit_config, load_config


@dataclass
class RunContext:
    command: str
    model: SystemModel
    cost: CostSpec
    config: RunConfig
    config_hash: str
    out_dir: str
    jobs: int
    started_at: str

    @property
    def seed(self) -> int:
        return self.config.run.seed


def get_run_context(args: argparse.Namespace, command: str) -> RunContext:
    """
    Load and validate the run configuration named on the command line,
    apply --set/--seed overrides and prepare the output directory.
    """
    path = args.config
    if not os.path.isfile(path):
        raise ConfigError(f"config not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()

    model, cost, config = load_config(text, getattr(args, "overrides", None) or (), getattr(args, "seed", None))
    digest = config_hash(config)
    out_dir = storage.run_dir(args.out or os.path.join(OUTPUT_DIR, f"{command}-{digest[:12]}"))
    storage.upload_bytes(out_dir, "config.json", (emit_config(config) + "\n").encode("utf-8"))

    return RunContext(
        command=command,
        model=model,
        cost=cost,
        config=config,
        config_hash=digest,
        out_dir=out_dir,
        jobs=max(1, int(getattr(args, "jobs", None) or DEFAULT_JOBS)),
        started_at=datetime.utcnow().isoformat(),
    )
