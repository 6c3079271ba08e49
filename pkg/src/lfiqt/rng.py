"""Counter-based Gaussian noise keyed on (seed, voxel index).

Voxel ``i`` consumes Philox raw outputs ``2i`` and ``2i + 1``, so any block
of voxels can be generated independently and matches the full field.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

_WORDS_PER_BLOCK = 4  # Philox4x64 emits four 64-bit words per counter step


def _raw_words(seed, start, count):
    if seed < 0:
        raise ParameterError(f"seed must be non-negative, got {seed}")
    block, skip = divmod(start, _WORDS_PER_BLOCK)
    bitgen = np.random.Philox(key=int(seed), counter=block)
    return bitgen.random_raw(skip + count)[skip:]


def standard_normal(seed, start, count):
    """Standard normal deviates for flat voxel indices ``start .. start+count-1``."""
    raw = _raw_words(seed, 2 * start, 2 * count)
    bits = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53
    u1 = 1.0 - bits[0::2]  # (0, 1], safe for log
    u2 = bits[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def gaussian_field(seed, shape):
    """Standard normal field with C-order voxel indexing."""
    n = int(np.prod(shape))
    return standard_normal(seed, 0, n).reshape(shape)
