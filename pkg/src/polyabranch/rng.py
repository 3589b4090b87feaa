"""Reproducible random streams and replica-parallel execution.

Every stream is a Philox (counter-based) generator keyed by the 64-bit
master seed and a tuple of stream indices. Replicas are cut into chunks of
fixed size and chunk ``c`` of stream ``s`` always uses key ``(s, c)``, so
results depend on ``(seed, replicas, chunk)`` and never on the number of
workers.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np

CHUNK = 10_000
_MASK64 = (1 << 64) - 1


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _chunk_sizes(n: int, chunk: int) -> list[int]:
    if n < 1:
        raise ValueError("need at least one replica")
    full, rest = divmod(n, chunk)
    return [chunk] * full + ([rest] if rest else [])


def _run_chunk(args):
    fn, seed, key, c, size = args
    return np.asarray(fn(stream(seed, *key, c), size))


def replicate(fn: Callable[[np.random.Generator, int], np.ndarray], n: int, seed: int,
              key=(0,), chunk: int = CHUNK, workers: int = 1) -> np.ndarray:
    """Evaluate ``fn(rng, size)`` over ``n`` replicas and stack the results.

    ``fn`` returns one row (or scalar) per replica. With ``workers > 1``
    chunks run in a process pool; ``fn`` must then be picklable.
    """
    key = tuple(key) if isinstance(key, (tuple, list)) else (key,)
    jobs = [(fn, seed, key, c, s) for c, s in enumerate(_chunk_sizes(n, chunk))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    return np.concatenate(parts, axis=0)
