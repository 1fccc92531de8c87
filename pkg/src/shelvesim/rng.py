"""Counter-based random streams.

Every shot owns an independent stream addressed by ``(seed, purpose)`` and a
draw counter, so a vectorized batch, a single-shot call and a threaded run
all see bit-identical numbers.  The mixing function is the SplitMix64
finalizer; draws are ``splitmix64(key + (counter + 1) * GAMMA)``.
"""
from __future__ import annotations

import zlib

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_POW_53 = float(2**53)


def mix64(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def purpose_tag(purpose: str) -> np.uint64:
    return np.uint64(zlib.crc32(purpose.encode()))


def _as_u64(seeds) -> np.ndarray:
    seeds = np.asarray(seeds)
    if seeds.dtype == np.uint64:
        return seeds
    return seeds.astype(np.int64).astype(np.uint64)


def stream_keys(seeds, purpose: str) -> np.ndarray:
    """Stream keys for an array of integer seeds under a named purpose."""
    tag = mix64(purpose_tag(purpose) + GAMMA)
    return mix64(mix64(_as_u64(seeds)) ^ tag)


def shot_keys(base_seed: int, shot_indices, purpose: str) -> np.ndarray:
    """Keys for shot ``i`` of a run seeded ``base_seed``.

    The base seed is scrambled before the index is added, so runs with
    nearby seeds (7 and 8, or 1000 apart) share no shot streams.
    """
    idx = np.asarray(shot_indices, dtype=np.int64).astype(np.uint64)
    base = mix64(np.uint64(int(base_seed) & 0xFFFFFFFFFFFFFFFF))
    with np.errstate(over="ignore"):
        return stream_keys(base + idx, purpose)


def uniform(keys, counters) -> np.ndarray:
    """Uniform draws strictly inside (0, 1) with 53 random bits."""
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = keys + (counters + np.uint64(1)) * GAMMA
    bits = mix64(state) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) / _TWO_POW_53


class Stream:
    """Sequential view of one counter stream (scalar convenience)."""

    def __init__(self, seed: int, purpose: str):
        self.key = stream_keys([seed], purpose)[0]
        self.counter = 0

    def random(self, size: int | None = None):
        n = 1 if size is None else int(size)
        out = uniform(np.full(n, self.key), np.arange(self.counter, self.counter + n))
        self.counter += n
        return float(out[0]) if size is None else out
