"""Counter-based uniforms from the SplitMix64 output function.

Entry ``(i, j)`` of a stream with row width ``w`` is the SplitMix64 output at
counter ``i * w + j + 1`` under a 64-bit key, so any block of rows can be
produced independently of the others and every platform sees the same bits.

Constants (Steele, Lea and Flood 2014; finalizer variant 13 of Stafford):

    golden gamma  0x9E3779B97F4A7C15
    mix multiply  0xBF58476D1CE4E5B9, 0x94D049BB133111EB
    shifts        30, 27, 31

Keys come from ``blake2b(f"{seed}/{purpose}")`` so each purpose string gets an
independent stream from the same top-level seed.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "evaluation_seed", "splitmix64", "uniforms"]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 2.0**-53


def derive_seed(seed: int, purpose: str) -> int:
    """64-bit child seed for ``purpose``; stable across runs and platforms."""
    digest = hashlib.blake2b(f"{int(seed)}/{purpose}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def evaluation_seed(seed: int) -> int:
    """Seed for held-out evaluation batches, disjoint from the training streams of ``seed``."""
    return derive_seed(seed, "evaluation") >> 1


def splitmix64(key: int, counters: np.ndarray) -> np.ndarray:
    z = counters.astype(np.uint64)
    z *= _GOLDEN
    z += np.uint64(key % 2**64)
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


def uniforms(key: int, start_row: int, n_rows: int, width: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1), shape ``(n_rows, width)``."""
    counters = np.arange(
        start_row * width + 1, (start_row + n_rows) * width + 1, dtype=np.uint64
    ).reshape(n_rows, width)
    bits = splitmix64(key, counters)
    bits >>= np.uint64(11)
    u = bits.astype(np.float64)
    u += 0.5
    u *= _TWO_M53
    return u
