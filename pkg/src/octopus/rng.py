"""Seeded, counter-based random number generation with named streams.

Every stream is identified by a (seed, label) pair and is backed by a
Philox counter-based bit generator, so the same pair always yields the
same sample sequence regardless of platform or of what other streams
were consumed first.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import InvalidArgumentError


def _key(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}/{label}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


class RngState:
    """A named random stream derived from a master seed.

    Child streams created via :meth:`stream` are statistically independent
    of the parent and of each other; their sequences depend only on
    (seed, full label path).
    """

    def __init__(self, seed: int, label: str = "root"):
        self.seed = int(seed)
        self.label = label
        self._gen = np.random.Generator(np.random.Philox(key=_key(self.seed, label)))

    def stream(self, label: str) -> "RngState":
        """Derive an independent child stream."""
        return RngState(self.seed, f"{self.label}/{label}")

    def gaussian(self, n: int, sigma: float) -> np.ndarray:
        """Draw n i.i.d. N(0, sigma^2) samples, advancing this stream."""
        if n < 1:
            raise InvalidArgumentError(f"need n >= 1, got {n}")
        if sigma < 0:
            raise InvalidArgumentError(f"need sigma >= 0, got {sigma}")
        if sigma == 0.0:
            return np.zeros(n)
        return self._gen.normal(0.0, sigma, size=n)

    def uniform(self, n: int) -> np.ndarray:
        return self._gen.random(n)

    def integers(self, low: int, high: int, n: int | None = None):
        """Uniform integers in [low, high)."""
        if n is None:
            return int(self._gen.integers(low, high))
        return self._gen.integers(low, high, size=n)

    def choice_weighted(self, weights: np.ndarray) -> int:
        """Sample an index proportionally to non-negative weights."""
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if total <= 0:
            raise InvalidArgumentError("weights must have positive sum")
        cdf = np.cumsum(w / total)
        u = self._gen.random()
        return int(np.searchsorted(cdf, u, side="right").clip(0, len(w) - 1))


def gaussian(rng: RngState, n: int, sigma: float) -> np.ndarray:
    """Functional alias for :meth:`RngState.gaussian`."""
    return rng.gaussian(n, sigma)
