"""Deterministic seed derivation.

Every random draw descends from one 64-bit master seed.  A child seed is the
first 64-bit word of ``numpy.random.SeedSequence(master, spawn_key=path)``
where ``path`` is a tuple of small integers naming the consumer (suite,
item index, ...).  Children depend only on the master seed and their path, so
serial and parallel runs draw identical numbers.
"""

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, int):
        return part
    return zlib.crc32(str(part).encode())


def derive_seed(master: int, *path) -> int:
    seq = np.random.SeedSequence(master, spawn_key=tuple(_key(p) for p in path))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
