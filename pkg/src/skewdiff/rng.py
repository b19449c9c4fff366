"""Counter-based random-number streams and a deterministic block scheduler.

Monte Carlo work is split into fixed-size path blocks.  Block ``j`` of a run
draws from its own Philox stream keyed by ``(seed, j)``, and block results
are reduced in block order, so output is bit-identical for a given
``(seed, config)`` no matter how many worker threads execute the blocks.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_BLOCK_SIZE = 16384

_MASK64 = (1 << 64) - 1


def stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Independent generator for stream ``stream_id`` of run ``seed``."""
    key = (int(seed) & _MASK64, int(stream_id) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit argument, else SKEWDIFF_THREADS, else 1."""
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("SKEWDIFF_THREADS", "").strip()
    return max(1, int(env)) if env else 1


def block_sizes(n_items: int, block_size: int = DEFAULT_BLOCK_SIZE) -> list[int]:
    """Sizes of the fixed-layout blocks covering ``n_items``."""
    if n_items < 1:
        raise ValueError(f"n_items must be >= 1, got {n_items}")
    full, rest = divmod(n_items, block_size)
    return [block_size] * full + ([rest] if rest else [])


def map_blocks(
    fn: Callable[[int, int, np.random.Generator], object],
    n_items: int,
    seed: int,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int | None = None,
) -> list:
    """Run ``fn(block_index, block_n, rng)`` per block; results in block order.

    The per-block generator depends only on ``(seed, block_index)``, and the
    returned list order is fixed, so the reduction downstream is independent
    of the thread count.
    """
    sizes = block_sizes(n_items, block_size)
    nthreads = resolve_threads(threads)
    if nthreads == 1 or len(sizes) == 1:
        return [fn(j, n, stream(seed, j)) for j, n in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        futures = [pool.submit(fn, j, n, stream(seed, j)) for j, n in enumerate(sizes)]
        return [f.result() for f in futures]
