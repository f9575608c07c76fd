"""Deterministic child-seed derivation.

Every randomized stage derives its generator from (global seed, stage tags)
through a SeedSequence, so stage-level parallelism or reordering cannot change
results. Tags are strings hashed with crc32 to keep the scheme documented and
platform-stable.
"""

from __future__ import annotations

import zlib

import numpy as np


def child_seed_sequence(seed: int, *tags) -> np.random.SeedSequence:
    entropy = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            entropy.append(zlib.crc32(tag.encode("utf-8")))
        else:
            entropy.append(int(tag) & 0xFFFFFFFF)
    return np.random.SeedSequence(entropy)


def rng_for(seed: int, *tags) -> np.random.Generator:
    """PCG64 generator keyed by the global seed plus stage tags."""
    return np.random.default_rng(child_seed_sequence(seed, *tags))
