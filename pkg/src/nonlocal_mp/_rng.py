"""Seeded counter-based random streams.

Every random draw in the package comes from ``generator(seed, *stream)``.
Streams are keyed by integers (operation tag, sample index, ...), so results
do not depend on evaluation order.
"""
import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def tag(name):
    """Stable integer tag for a stream name."""
    return zlib.crc32(name.encode("utf-8"))


def generator(seed, *stream):
    words = [int(seed) & _MASK64]
    for s in stream:
        words.append(tag(s) if isinstance(s, str) else int(s) & _MASK64)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
