"""Deterministic parallel execution over independent per-head tasks.

Every task derives its own seed from (run seed, layer, head) through
numpy's SeedSequence, so results are identical whether tasks run serially
or under the thread pool, and regardless of completion order. The
KVSCULPT_THREADS environment variable caps the pool size.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def max_workers() -> int:
    env = os.environ.get("KVSCULPT_THREADS")
    if env is not None:
        try:
            value = int(env)
        except ValueError as exc:
            raise ValueError(f"KVSCULPT_THREADS must be an integer, got {env!r}") from exc
        if value < 1:
            raise ValueError("KVSCULPT_THREADS must be >= 1")
        return value
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Order-preserving map over the shared thread pool."""
    items = list(items)
    workers = min(max_workers(), max(len(items), 1))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def task_seed(seed: int, layer: int, head: int) -> int:
    """Fixed mixing function fanning one run seed out to per-task seeds."""
    ss = np.random.SeedSequence((seed, layer, head))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
