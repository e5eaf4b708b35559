"""Counter-based random streams.

Every draw is fully determined by (seed, counter): each call keys a fresh
Philox generator at a disjoint counter block, so replaying from a saved
(seed, counter) pair reproduces the stream bit-for-bit on any platform.
"""

from __future__ import annotations

import numpy as np

_BLOCK = 1 << 128  # Philox has a 256-bit counter; one block per draw is plenty


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


class Rng:
    """One named random stream. State is exactly (seed, counter)."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def _next(self) -> np.random.Generator:
        gen = np.random.Generator(
            np.random.Philox(key=self.seed, counter=self.counter * _BLOCK)
        )
        self.counter += 1
        return gen

    def normal(self, shape=(), dtype=np.float32) -> np.ndarray:
        return self._next().standard_normal(shape, dtype=dtype)

    def uniform(self, shape=(), dtype=np.float32) -> np.ndarray:
        return self._next().random(shape, dtype=dtype)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._next().integers(low, high, size=shape)

    def child(self, stream: int) -> "Rng":
        """Derive an independent stream; deterministic in (seed, stream)."""
        return Rng(_splitmix64(self.seed ^ _splitmix64(stream)))

    def state(self) -> tuple[int, int]:
        return (self.seed, self.counter)
