"""Splittable random streams.

Every random draw in the package comes from a stream derived from one master
seed plus a tuple key (scan point, pulse block, ...). Pulse blocks have a fixed
size, so the numbers produced never depend on how many workers run them.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

BLOCK_SIZE = 1 << 16

T = TypeVar("T")


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for ``(seed, *key)``; identical inputs give identical draws."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def block_sizes(pulses: int, block_size: int = BLOCK_SIZE) -> list[int]:
    if pulses < 1:
        raise ValueError("pulses must be >= 1")
    full, rest = divmod(pulses, block_size)
    return [block_size] * full + ([rest] if rest else [])


def map_blocks(
    func: Callable[[np.random.Generator, int], T],
    pulses: int,
    seed: int,
    key: Sequence[int] = (),
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> list[T]:
    """Run ``func(rng, n)`` over pulse blocks and return results in block order."""
    sizes = block_sizes(pulses, block_size)
    jobs = [(stream(seed, *key, i), n) for i, n in enumerate(sizes)]
    if workers <= 1 or len(jobs) == 1:
        return [func(rng, n) for rng, n in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: func(*job), jobs))
