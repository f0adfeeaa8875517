"""Seeded random streams.

Every random draw in the package comes from ``make_rng(seed, *stream)``: a
numpy ``Generator`` over PCG64 whose ``SeedSequence`` uses ``seed`` as entropy
and ``stream`` as spawn key. Distinct stream ids (layer index, trial number,
purpose tag) give statistically independent generators, and the same
``(seed, stream)`` always reproduces the same draws.
"""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def make_rng(seed, *stream):
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(s) for s in stream))
    return np.random.Generator(np.random.PCG64(seq))
