"""Deterministic random streams built on numpy's counter-based Philox.

Every consumer of randomness (mask sampling, dropout, init, resets,
shuffles, data generation) takes an explicit RngState. A state is fully
identified by (seed, path): identical seed and call sequence reproduce
identical draws, and `split(tag)` derives an independent, documented
substream so e.g. the reset baselines never perturb the pretraining
stream.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["RngState"]


class RngState:
    """A seeded stream plus named substream derivation."""

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def split(self, tag: str) -> "RngState":
        """Derive the substream named `tag` (stable across runs/platforms)."""
        return RngState(self.seed, self.path + (zlib.crc32(tag.encode("utf-8")),))

    # -- draws ---------------------------------------------------------

    def uniform(self, shape=None) -> np.ndarray:
        """U[0, 1) draws of the given shape (scalar ndarray if shape None)."""
        return self._gen.random(size=shape)

    def normal(self, shape=None, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, std, size=shape)

    def truncated_normal(self, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
        """Normal(0, std) with draws beyond bound*std redrawn."""
        out = self._gen.normal(0.0, std, size=shape)
        limit = bound * std
        bad = np.abs(out) > limit
        while bad.any():
            out[bad] = self._gen.normal(0.0, std, size=int(bad.sum()))
            bad = np.abs(out) > limit
        return out

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_index(self, cumulative_weights: np.ndarray) -> int:
        """Weighted category draw given an inclusive cumulative weight array."""
        u = self._gen.random() * cumulative_weights[-1]
        return int(np.searchsorted(cumulative_weights, u, side="right"))

    def __repr__(self):
        return f"RngState(seed={self.seed}, path={self.path})"
