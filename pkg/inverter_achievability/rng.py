"""
Counter-based random streams.

Every random draw in the package comes from numpy's Philox4x64-10 generator
keyed by (seed, stream id) with the sample index in the high counter word, so
a sample's values depend only on (seed, stream, index) and never on how work
is scheduled across threads. The constants below are part of the
reproducibility contract: changing them changes every sampled artifact.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

_WORD = 1 << 64


class Stream(IntEnum):
    SETPOINTS = 1
    GAINS = 2
    PROFILES = 3
    FALSIFIER = 4


def substream(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Generator for sample `index` of `stream` under `seed`."""
    seed, stream, index = int(seed), int(stream), int(index)
    if not 0 <= seed < _WORD:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    if not 0 <= stream < _WORD or not 0 <= index < _WORD:
        raise ValueError("stream id and index must be non-negative 64-bit integers")
    key = seed | (stream << 64)
    # low 128 counter bits are left for the generator to advance
    counter = index << 128
    return np.random.Generator(np.random.Philox(key=key, counter=counter))

