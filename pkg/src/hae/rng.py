"""Seeded counter-based random streams.

Built on numpy's Philox generator so that a stream is fully identified by
(seed, path): identical seed and draw sequence give identical outputs, and
``child`` derives statistically independent substreams without consuming
draws from the parent.
"""

from __future__ import annotations

import numpy as np


class RngStream:
    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *path: int) -> "RngStream":
        return RngStream(self.seed, self.path + path)

    def random(self, shape=None):
        return self._gen.random(shape)

    def integers(self, high: int, size=None):
        return self._gen.integers(high, size=size)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"
