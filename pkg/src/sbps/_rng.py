"""Deterministic derivation of independent random streams.

All stochastic components (search restarts, bootstrap replicates,
simulation replicates) draw from numpy PCG64 generators seeded by a
SeedSequence derived from (base seed, structural key).  Work items are
therefore pure functions of their keys, and results never depend on
worker count or scheduling.
"""

from __future__ import annotations

from typing import Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence]


def derive(seed: SeedLike, *key: int) -> np.random.SeedSequence:
    """Child SeedSequence of ``seed`` at the given key path."""
    if isinstance(seed, np.random.SeedSequence):
        base_entropy = seed.entropy
        base_key = tuple(seed.spawn_key)
    else:
        base_entropy = seed
        base_key = ()
    return np.random.SeedSequence(entropy=base_entropy,
                                  spawn_key=base_key + tuple(key))


def generator(seed: SeedLike, *key: int) -> np.random.Generator:
    """PCG64 generator at a derived key path."""
    return np.random.default_rng(derive(seed, *key))
