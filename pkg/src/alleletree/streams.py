"""Reproducible random streams for replicate-parallel Monte Carlo.

Replicates are cut into fixed-size chunks; chunk ``i`` of a named stream draws
from ``SeedSequence(master_seed, spawn_key=(key, i))``. Results therefore do
not depend on how many worker threads process the chunks.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

CHUNK = 1 << 14

R = TypeVar("R")


def _key(name: str | int) -> int:
    if isinstance(name, int):
        return name
    return zlib.crc32(name.encode())


def generator(master_seed: int, *keys: str | int) -> np.random.Generator:
    """Independent generator for a named sub-stream of ``master_seed``."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def replicate_generator(master_seed: int, index: int, *keys: str | int) -> np.random.Generator:
    """Generator owned by a single replicate."""
    return generator(master_seed, *keys, "replicate", index)


def chunk_bounds(n: int, chunk: int = CHUNK) -> list[tuple[int, int]]:
    return [(i, min(i + chunk, n)) for i in range(0, n, chunk)]


def map_chunks(
    fn: Callable[[int, np.random.Generator], R],
    n: int,
    master_seed: int,
    *keys: str | int,
    threads: int = 1,
    chunk: int = CHUNK,
) -> list[R]:
    """Call ``fn(size, rng)`` for every chunk, returning results in chunk order."""
    bounds = chunk_bounds(n, chunk)
    jobs = [(b - a, generator(master_seed, *keys, "chunk", i)) for i, (a, b) in enumerate(bounds)]
    if threads <= 1 or len(jobs) <= 1:
        return [fn(size, rng) for size, rng in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def concat(parts: Sequence, axis: int = 0):
    """Concatenate per-chunk results; tuples are concatenated field by field."""
    if not parts:
        return parts
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate([p[i] for p in parts], axis=axis) for i in range(len(parts[0])))
    if isinstance(parts[0], dict):
        return {k: concat([p[k] for p in parts], axis) for k in parts[0]}
    return np.concatenate(parts, axis=axis)
