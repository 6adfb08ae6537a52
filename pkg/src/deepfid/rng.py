"""Seeded, stream-addressable random sources.

Every draw is derived from uniform doubles produced by PCG64, so a given
``(seed, stream_id)`` pair always reproduces the same sequence.  Laplace
variates use the inverse CDF and normals use the Box-Muller transform; both
consume a fixed number of uniforms per output row, which makes the values
independent of how a caller chunks its requests.
"""

from __future__ import annotations

import numpy as np

_HALF_ULP = 2.0**-54


class RandomSource:
    """Independent PRNG stream keyed by ``(seed, stream_id)``."""

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, stream_id={self.stream_id})"

    def child(self, stream_id: int) -> "RandomSource":
        """A fresh source on another stream of the same seed."""
        return RandomSource(self.seed, stream_id)

    def uniform(self, size=None) -> np.ndarray:
        """Uniform draws on the half-open interval [0, 1)."""
        return self._gen.random(size)

    def open_uniform(self, size=None) -> np.ndarray:
        """Uniform draws strictly inside (0, 1)."""
        return self._gen.random(size) + _HALF_ULP

    def laplace(self, size) -> np.ndarray:
        """Standard Laplace draws (density exp(-|z|)/2) by inverse CDF."""
        u = self.open_uniform(size) - 0.5
        return -np.sign(u) * np.log1p(-2.0 * np.abs(u))

    def normal(self, size) -> np.ndarray:
        """Standard normal draws via Box-Muller, filled row by row."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        if len(shape) == 0:
            return self.normal((1,))[0]
        last = shape[-1]
        pairs = (last + 1) // 2
        u = self._gen.random(shape[:-1] + (pairs, 2))
        r = np.sqrt(-2.0 * np.log(u[..., 0] + _HALF_ULP))
        angle = 2.0 * np.pi * u[..., 1]
        out = np.stack([r * np.cos(angle), r * np.sin(angle)], axis=-1)
        return out.reshape(shape[:-1] + (2 * pairs,))[..., :last]

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
