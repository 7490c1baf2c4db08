"""Counter-based random substreams for block-parallel Monte Carlo.

Paths are split into fixed-size blocks. Block ``b`` of stream ``s`` draws from a
Philox generator keyed by ``SeedSequence(seed, spawn_key=(s, b))``, so the
numbers a path sees depend only on (seed, stream, path index) and never on how
many workers run the blocks.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 8192

# stream ids
FACTOR_PATHS = 1
WEALTH = 2
FEASIBILITY = 3


def worker_count(workers=None):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("NLMV_THREADS")
    if env:
        return max(1, int(env))
    return 1


def block_generator(seed: int, stream: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def block_sizes(paths: int, block_size: int = BLOCK_SIZE):
    if paths < 1:
        raise ValueError("paths must be >= 1")
    full, rest = divmod(paths, block_size)
    return [block_size] * full + ([rest] if rest else [])


def brownian_increments(seed, stream, block, n, steps, dim, dt):
    """Increments of shape (n, steps, dim) for one block."""
    gen = block_generator(seed, stream, block)
    return gen.standard_normal((n, steps, dim)) * np.sqrt(dt)


def map_blocks(fn, paths, workers=None, block_size=BLOCK_SIZE):
    """Run ``fn(block_index, n_paths)`` over all blocks; results in block order."""
    sizes = block_sizes(paths, block_size)
    jobs = list(enumerate(sizes))
    nw = min(worker_count(workers), len(jobs))
    if nw <= 1:
        return [fn(b, n) for b, n in jobs]
    with ThreadPoolExecutor(max_workers=nw) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
