"""Deterministic derived random streams.

Every stochastic component draws from its own generator, keyed by
(master seed, round, client, purpose). Streams are therefore independent
of execution order and of which policy is being simulated, which is what
makes common-random-number comparisons across policies possible.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def substream(master_seed: int, *path) -> np.random.Generator:
    """Generator for the stream identified by ``path`` under ``master_seed``."""
    key = tuple(_key_part(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master_seed), spawn_key=key))
