"""Named random streams derived from one root seed.

Every consumer (weight init, dropout, shuffling, scenario generation, MC
sampling, ...) asks for its own stream by name, so the numbers it sees do not
depend on how many draws other components made before it.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key_word(key: object) -> int:
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def stream(seed: int, *keys: object) -> np.random.Generator:
    """Return a generator for ``(seed, *keys)``.

    Keys may be non-negative ints or strings; strings are hashed with CRC32 so
    the mapping is stable across interpreter runs.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    entropy = [seed & 0xFFFFFFFF, seed >> 32] + [_key_word(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
