import logging
import os
from datetime import datetime

from pydantic import BaseModel

import storage
from core.config import TOOL_VERSION
from core.dependencies import RunContext

logger = logging.getLogger("manifest")

MANIFEST_FILE = "manifest.json"


class FileEntry(BaseModel):
    path: str
    sha256: str


class RunManifest(BaseModel):
    command: str
    config_hash: str
    tool_version: str
    seed: int
    started_at: str
    finished_at: str
    exit_code: int
    files: list[FileEntry]


def write_manifest(ctx: RunContext, exit_code: int = 0) -> RunManifest:
    """List every output file of the run with its sha256 digest."""
    files = [
        FileEntry(path=name, sha256=storage.file_digest(os.path.join(ctx.out_dir, name)))
        for name in storage.list_files(ctx.out_dir)
        if name != MANIFEST_FILE
    ]
    manifest = RunManifest(
        command=ctx.command,
        config_hash=ctx.config_hash,
        tool_version=TOOL_VERSION,
        seed=ctx.seed,
        started_at=ctx.started_at,
        finished_at=datetime.utcnow().isoformat(),
        exit_code=exit_code,
        files=files,
    )
    storage.upload_json(ctx.out_dir, MANIFEST_FILE, manifest)
    logger.info(f"{len(files)} files written to {ctx.out_dir}")
    return manifest
