"""Reproducible random substreams.

Every random quantity is drawn from a PCG64 generator seeded by
``SeedSequence(seed, spawn_key=key)``.  Monte Carlo work is cut into fixed-size
blocks of runs and block ``i`` of stream ``s`` always uses key ``(s, i)``, so
results do not depend on how blocks are distributed over workers.
"""

from __future__ import annotations

import numpy as np

BLOCK_SIZE = 8192

# stream ids
NULL_STREAM = 1
CHANGE_STREAM = 2
ARL_STREAM = 3


def substream(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in key))


def block_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(substream(seed, *key)))


def blocks(n_runs: int, block_size: int = BLOCK_SIZE):
    """Yield ``(block_index, n_in_block)`` covering ``n_runs`` runs."""
    full, rest = divmod(int(n_runs), block_size)
    for i in range(full):
        yield i, block_size
    if rest:
        yield full, rest
