"""Digest of every discrete branch taken during a forward evaluation.

The forward pass is piecewise smooth: splat inclusion tests, the sigma clamp,
tone-map clipping, the uncertainty floor, ReLU kinks and L1 signs all switch
branches at measure-zero boundaries. Central finite differences straddling
such a boundary are meaningless, so the gradient checker evaluates f(x+h) and
f(x-h) with a recorder attached and discards any parameter whose two
evaluations took different branches.
"""

from __future__ import annotations

import hashlib

import numpy as np


class DecisionLog:
    """Accumulates branch decisions into an order-sensitive digest."""

    def __init__(self):
        self._h = hashlib.blake2b(digest_size=16)

    def add_bits(self, mask: np.ndarray):
        self._h.update(np.packbits(np.asarray(mask, dtype=bool), axis=None).tobytes())

    def add_token(self, *values: int):
        self._h.update(np.asarray(values, dtype=np.int64).tobytes())

    def digest(self) -> bytes:
        return self._h.digest()
