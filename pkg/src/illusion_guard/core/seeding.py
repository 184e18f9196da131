"""Deterministic random streams.

Every random draw in the testbed comes from a generator seeded by mixing
``(master_seed, stream_tag, *indices)`` into one 64-bit integer with the
splitmix64 finalizer. Streams for different samples or draws never share
state, so work can be split across threads in any order.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(value: int) -> int:
    """One splitmix64 step on a 64-bit integer."""
    z = (value + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def tag_code(tag: str) -> int:
    """Stable 64-bit code for a stream tag (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream_seed(master_seed: int, tag: str, *indices: int) -> int:
    """Mix a master seed, a tag and integer indices into a 64-bit seed."""
    state = splitmix64(master_seed & _MASK64)
    state = splitmix64(state ^ tag_code(tag))
    for index in indices:
        state = splitmix64(state ^ (int(index) & _MASK64))
    return state


def stream_rng(master_seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Generator for the stream ``(master_seed, tag, *indices)``."""
    return np.random.default_rng(stream_seed(master_seed, tag, *indices))
