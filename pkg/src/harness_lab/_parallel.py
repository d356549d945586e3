"""Deterministic replica parallelism.

Work is split into fixed-size chunks whose seeds depend only on the caller's
seed and the chunk index, so results do not depend on the thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

CHUNK = 2000


def max_threads() -> int:
    env = os.environ.get("HARNESS_LAB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def chunk_plan(replicas: int, seed: int, chunk: int = CHUNK) -> list[tuple[int, int]]:
    """(size, seed) per chunk; chunk seeds come from a SeedSequence spawn."""
    sizes = [chunk] * (replicas // chunk)
    if replicas % chunk:
        sizes.append(replicas % chunk)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    return [(n, int(c.generate_state(1, dtype=np.uint32)[0])) for n, c in zip(sizes, children)]


def pmap(fn: Callable[..., T], jobs: Sequence) -> list[T]:
    """Ordered map over ``jobs`` (argument tuples) on up to ``max_threads()`` threads."""
    workers = min(max_threads(), len(jobs))
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def derive_seeds(seed: int, count: int) -> np.ndarray:
    """Independent 63-bit seeds for per-replica event streams."""
    return np.random.SeedSequence(seed).generate_state(count, dtype=np.uint64) >> np.uint64(1)
