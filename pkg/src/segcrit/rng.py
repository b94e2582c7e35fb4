"""Counter-based SplitMix64 streams and Box-Muller normals.

The stream is fully specified here so other implementations can reproduce
it: draw ``k`` (``k = 0, 1, ...``) of stream ``seed`` is
``mix64(seed + (k + 1) * GOLDEN)`` (mod 2**64), where ``mix64`` is the
SplitMix64 finaliser. Normal ``2j`` and ``2j + 1`` come from draws ``2j`` and
``2j + 1`` via Box-Muller with ``u1 = ((d0 >> 11) + 1) / 2**53`` in (0, 1] and
``u2 = (d1 >> 11) / 2**53``: ``r * cos(2 pi u2)`` then ``r * sin(2 pi u2)``
with ``r = sqrt(-2 ln u1)``.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed; order-sensitive."""
    h = 0
    for p in parts:
        h = mix64(h ^ mix64((int(p) & MASK64) + GOLDEN))
    return h


def uint64_stream(seed: int, count: int, start: int = 0) -> np.ndarray:
    k = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(int(seed) & MASK64) + k * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def uniform53(draws: np.ndarray) -> np.ndarray:
    return (draws >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def standard_normal(seed: int, count: int) -> np.ndarray:
    pairs = (count + 1) // 2
    d = uint64_stream(seed, 2 * pairs)
    u1 = uniform53(d[0::2]) + 1.0 / 9007199254740992.0
    u2 = uniform53(d[1::2])
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:count]
