"""Seeded random-number helpers.

Every stochastic routine in the package takes an explicit seed and builds
its generator here, so runs are reproducible and sub-streams can be split
without coupling call sites to each other. Splitting uses
``numpy.random.SeedSequence.spawn`` keyed by the master seed, which is the
documented rule for deriving worker sub-seeds.
"""
from __future__ import annotations

import numpy as np


def rng(seed: int | np.random.SeedSequence, *spawn_key: int) -> np.random.Generator:
    """Return a counter-based generator for ``seed``, optionally sub-keyed.

    ``rng(s, k1, k2)`` is a stream independent of ``rng(s)`` and of any
    other spawn key, and identical across processes and platforms.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(int(seed))
    if spawn_key:
        ss = np.random.SeedSequence(entropy=ss.entropy, spawn_key=ss.spawn_key + tuple(spawn_key))
    return np.random.Generator(np.random.Philox(ss))


def split_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Spawn ``n`` child seed sequences from a master seed."""
    return np.random.SeedSequence(int(seed)).spawn(n)
