# storage.py
import hashlib
import json
import os

import pandas as pd
from pydantic import BaseModel

from core.config import OUTPUT_DIR


def run_dir(path: str | None = None) -> str:
    path = path or OUTPUT_DIR
    os.makedirs(path, exist_ok=True)
    return path


def upload_bytes(out_dir: str, name: str, data: bytes) -> str:
    path = os.path.join(run_dir(out_dir), name)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)
    return path


def upload_json(out_dir: str, name: str, payload) -> str:
    if isinstance(payload, BaseModel):
        text = payload.model_dump_json(indent=2)
    else:
        text = json.dumps(payload, indent=2, sort_keys=True)
    return upload_bytes(out_dir, name, (text + "\n").encode("utf-8"))


def upload_frame(out_dir: str, name: str, frame: pd.DataFrame) -> str:
    return upload_bytes(out_dir, name, frame.to_csv(index=False).encode("utf-8"))


def download_to_bytes(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def download_json(path: str) -> dict:
    return json.loads(download_to_bytes(path).decode("utf-8"))


def download_frame(path: str) -> pd.DataFrame:
    return pd.read_csv(path)


def file_digest(path: str) -> str:
    return hashlib.sha256(download_to_bytes(path)).hexdigest()


def list_files(out_dir: str) -> list[str]:
    out = []
    for root, _, files in os.walk(out_dir):
        for name in files:
            out.append(os.path.relpath(os.path.join(root, name), out_dir))
    return sorted(out)
