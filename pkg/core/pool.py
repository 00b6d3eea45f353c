import logging
import multiprocessing
from typing import Callable, Sequence, TypeVar

import numpy as np

from core.config import CHUNK_SIZE, DEFAULT_JOBS

logger = logging.getLogger("pool")

T = TypeVar("T")


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """
    Noise stream of trajectory `index` in a run seeded with `seed`.
    Depends only on the pair, never on chunking or worker count.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def chunk_indices(n: int, chunk_size: int = CHUNK_SIZE) -> list[np.ndarray]:
    if n < 1:
        return []
    chunk_size = max(1, int(chunk_size))
    return [np.arange(i, min(i + chunk_size, n)) for i in range(0, n, chunk_size)]


def map_chunks(
    fn: Callable[..., T],
    chunks: Sequence[np.ndarray],
    args: tuple = (),
    jobs: int | None = None,
) -> list[T]:
    """
    Apply fn(indices, *args) to every chunk and return results in chunk order.
    Runs inline for a single job, otherwise in a multiprocessing pool.
    """
    jobs = max(1, int(jobs or DEFAULT_JOBS))
    tasks = [(fn, c, args) for c in chunks]

    if jobs == 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]

    logger.debug(f"dispatching {len(tasks)} chunks to {jobs} workers")
    with multiprocessing.Pool(processes=min(jobs, len(tasks))) as pool:
        return pool.map(_run_task, tasks)


def _run_task(task):
    fn, indices, args = task
    return fn(indices, *args)
