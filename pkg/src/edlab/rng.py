"""Counter-based random streams.

Every draw is addressed by (seed, purpose, step, position). The Philox key
carries (seed, purpose, step) and the position is the counter offset, so a
walker's normals never depend on how walkers are split into chunks or threads.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

INIT = 1
NOISE = 2

_MASK64 = (1 << 64) - 1
_WORDS_PER_BLOCK = 4  # Philox4x64 emits four 64-bit words per counter increment


def _key(seed: int, purpose: int, step: int) -> int:
    if not 0 <= step < (1 << 56):
        raise ValueError(f"step index {step} out of range")
    return (int(seed) & _MASK64) | (int(purpose) & 0xFF) << 64 | int(step) << 72


def raw_words(seed: int, purpose: int, step: int, start: int, count: int) -> np.ndarray:
    """``count`` 64-bit words beginning at word offset ``start`` of the addressed stream."""
    block, offset = divmod(int(start), _WORDS_PER_BLOCK)
    bitgen = np.random.Philox(key=_key(seed, purpose, step), counter=block)
    return bitgen.random_raw(count + offset)[offset:]


def uniforms(seed: int, purpose: int, step: int, start: int, count: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1) with 53-bit resolution."""
    words = raw_words(seed, purpose, step, start, count)
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(seed: int, purpose: int, step: int, start: int, count: int) -> np.ndarray:
    """Standard normals by inverse CDF, one per counter position."""
    return ndtri(uniforms(seed, purpose, step, start, count))
