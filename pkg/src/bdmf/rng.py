"""Deterministic random streams for parallel Monte Carlo.

Every replica draws from its own counter-based Philox stream keyed by
(master seed, stream indices).  Stream identity depends only on the key,
never on scheduling, so results are reproducible across thread counts.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def stream_key(seed: int, *indices: int) -> int:
    """128-bit Philox key derived from a 64-bit seed and stream indices."""
    acc = _splitmix64(int(seed) & _MASK64)
    for ix in indices:
        acc = _splitmix64(acc ^ _splitmix64(int(ix) & _MASK64))
    return (acc << 64) | _splitmix64(acc ^ _GOLDEN)


def bit_generator(seed: int, *indices: int) -> np.random.Philox:
    return np.random.Philox(key=stream_key(seed, *indices))


def generator(seed: int, *indices: int) -> np.random.Generator:
    return np.random.Generator(bit_generator(seed, *indices))
