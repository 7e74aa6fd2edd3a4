"""Reproducible, independent random streams keyed by (seed, stream_id)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")

    def generator(self) -> np.random.Generator:
        # spawn_key gives statistically independent children of one root seed
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def normal(self, size) -> np.ndarray:
        return self.generator().standard_normal(size)

    def child(self, index: int) -> "RngStream":
        """A stream disjoint from every (seed, stream_id) used for path ensembles."""
        return RngStream(self.seed, (self.stream_id + 1) * 1_000_003 + index)


def stream_normals(seed: int, first: int, count: int, size) -> np.ndarray:
    """Stack ``count`` draws of shape ``size``, row i from RngStream(seed, first + i)."""
    size = (size,) if np.isscalar(size) else tuple(size)
    out = np.empty((count,) + size)
    for i in range(count):
        out[i] = RngStream(seed, first + i).normal(size)
    return out
