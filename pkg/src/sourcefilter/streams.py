"""Reproducible random streams keyed by (seed, label, index, ...).

Every consumer of randomness asks for its own stream with a key that names
what it is for.  Streams are Philox (counter-based) generators seeded through
``SeedSequence``, so the numbers a replica sees depend only on its key and not
on how many workers run or in which order chunks finish.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def _word(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    value = int(part)
    if value < 0:
        raise ValueError(f"stream key parts must be non-negative, got {value}")
    return value


def stream(seed: int, *key) -> np.random.Generator:
    """Return the generator for ``(seed, *key)``.

    Key parts may be non-negative integers or strings.  Equal keys give
    bit-identical streams; distinct keys give statistically independent ones.
    """
    entropy = [_word(seed)] + [_word(k) for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def chunk_bounds(n: int, chunk: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def chunked_map(fn: Callable[[int, int, int], T], n: int, chunk: int,
                workers: int = 1) -> list[T]:
    """Apply ``fn(index, lo, hi)`` to fixed-size chunks of ``range(n)``.

    Chunk boundaries depend only on ``n`` and ``chunk``; results come back in
    chunk order whatever ``workers`` is, so reductions over them are
    reproducible.
    """
    bounds = chunk_bounds(n, chunk)
    if workers <= 1 or len(bounds) == 1:
        return [fn(i, lo, hi) for i, (lo, hi) in enumerate(bounds)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, i, lo, hi) for i, (lo, hi) in enumerate(bounds)]
        return [f.result() for f in futures]


def ordered_concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts) if parts else np.empty(0)
