"""Seed handling: every random quantity derives from (master_seed, key...)."""
from __future__ import annotations

import numpy as np


def make_rng(seed) -> np.random.Generator:
    """Philox-backed generator from an int, SeedSequence or existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def replica_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent stream for replica `key` under `master_seed`.

    The stream depends only on (master_seed, key), never on scheduling.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
