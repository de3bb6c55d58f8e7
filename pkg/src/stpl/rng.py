"""Deterministic pseudo-random streams built on counter-mode SplitMix64.

Every random decision in the package (weight init, data synthesis, shuffling,
validation splits) flows through :class:`Stream` so a run is fully reproduced
by one u64 seed. The i-th draw is a pure function of (seed, i): streams can be
split, resumed from a checkpoint, or evaluated in bulk with numpy, and all
three give bitwise-identical values.

Algorithm: the SplitMix64 finalizer (Steele, Lea & Flood; Vigna's constants)
applied to ``seed + i * GAMMA`` with i counting from 1, which reproduces the
reference generator's output sequence for the same seed. Child streams use a
double-finalized seed so the child-seed space does not collide with the
parent's output space. Not cryptographic; chosen for cross-platform
determinism and good equidistribution at this scale.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15

_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def _finalize(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix(seed: int, index: int) -> int:
    """Derive a child seed from (seed, index); used to split streams."""
    return _finalize(_finalize((seed + (index & MASK64) * GAMMA) & MASK64))


def _finalize_array(z: np.ndarray) -> np.ndarray:
    # Vectorized twin of _finalize; uint64 arithmetic wraps like the masked
    # Python-int version.
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
        return z ^ (z >> np.uint64(31))


class Stream:
    """A resumable deterministic random stream.

    State is exactly (seed, counter), both u64 and trivially serializable.
    `counter` is the number of values drawn so far; bulk helpers advance it by
    the number of values produced, so a sequence of calls is equivalent to the
    same draws made one at a time.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.seed = seed & MASK64
        self.counter = counter & MASK64

    def child(self, index: int) -> "Stream":
        """Independent substream; its draw order is its own."""
        return Stream(mix(self.seed, index))

    def next_u64(self) -> int:
        self.counter = (self.counter + 1) & MASK64
        return _finalize((self.seed + self.counter * GAMMA) & MASK64)

    def next_double(self) -> float:
        # 53 top bits -> [0, 1) at full double resolution.
        return (self.next_u64() >> 11) * (2.0**-53)

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) via 128-bit multiply-shift."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.next_double()

    def doubles(self, count: int) -> np.ndarray:
        """Bulk [0,1) doubles; identical to `count` next_double() calls."""
        if count < 0:
            raise ValueError("count must be non-negative")
        idx = np.arange(self.counter + 1, self.counter + count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(GAMMA)
        out = (_finalize_array(z) >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        self.counter = (self.counter + count) & MASK64
        return out

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates using next_below for the index draws."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        order = list(range(n))
        self.shuffle(order)
        return order
