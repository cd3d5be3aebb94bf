"""Counter-based random streams.

Every random draw in a simulation is addressed by a key such as
``(seed, stream, day, individual, slot)`` and computed by hashing that key,
so the value of a draw does not depend on how many draws came before it.
Two scenarios run with the same seed therefore see the same coin flips for
the same individual on the same day (common random numbers), and per-day
work can be split across workers without changing results.

Coarse-grained streams (one per filter run, bootstrap, ...) use numpy
generators seeded from a :class:`numpy.random.SeedSequence` built from the
same kind of key.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def stream_id(name: str) -> int:
    """Stable 32-bit identifier for a named sub-stream."""
    return zlib.crc32(name.encode("utf-8"))


def _mix(x):
    # splitmix64 finalizer; uint64 arithmetic wraps modulo 2**64
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def _as_u64(value) -> np.ndarray:
    arr = np.asarray(value)
    if arr.dtype.kind == "u":
        return arr.astype(np.uint64)
    return np.ascontiguousarray(arr, dtype=np.int64).view(np.uint64)


def hash_key(seed: int, *parts) -> np.ndarray:
    """Hash a key made of a seed and any number of integer (array) parts.

    Array parts broadcast against each other; the result is a uint64 array.
    """
    with np.errstate(over="ignore"):
        h = _mix(np.asarray(np.uint64(seed & _MASK)) + _GOLDEN)
        for part in parts:
            h = _mix(h ^ (_mix(_as_u64(part) + _GOLDEN)))
    return h


def uniform(seed: int, stream: str, day, ids, slot=0) -> np.ndarray:
    """Uniform draws in [0, 1) keyed by (seed, stream, day, id, slot)."""
    h = hash_key(seed, stream_id(stream), day, ids, slot)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def generator(seed: int, *keys) -> np.random.Generator:
    """A numpy generator for a named coarse-grained stream.

    ``keys`` may be non-negative integers or strings; strings are mapped
    through :func:`stream_id`.
    """
    words = [seed & _MASK]
    for k in keys:
        words.append(stream_id(k) if isinstance(k, str) else int(k) & _MASK)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a fresh 63-bit seed from ``rng``."""
    return int(rng.integers(0, 2**63 - 1))
