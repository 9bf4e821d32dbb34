"""Orthonormal multi-level 2-D Haar transform.

Coefficients use the usual pyramid layout: the approximation band sits in the
top-left corner and each level's three detail bands fill the remaining
quadrants of the current block.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import ParameterError

_R2 = np.sqrt(0.5)


def _check(x: np.ndarray) -> int:
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ParameterError(f"Haar transform needs a square image, got {x.shape}")
    n = x.shape[0]
    if n < 1 or n & (n - 1):
        raise ParameterError(f"Haar transform needs a power-of-two side, got {n}")
    return n


def _max_levels(n: int) -> int:
    return int(np.log2(n))


def haar_dwt(image, levels: Optional[int] = None) -> np.ndarray:
    x = np.array(image, dtype=np.float64)
    n = _check(x)
    levels = _max_levels(n) if levels is None else levels
    size = n
    for _ in range(levels):
        if size < 2:
            break
        blk = x[:size, :size]
        lo = (blk[:, 0::2] + blk[:, 1::2]) * _R2
        hi = (blk[:, 0::2] - blk[:, 1::2]) * _R2
        blk = np.hstack([lo, hi])
        lo = (blk[0::2] + blk[1::2]) * _R2
        hi = (blk[0::2] - blk[1::2]) * _R2
        x[:size, :size] = np.vstack([lo, hi])
        size //= 2
    return x


def haar_idwt(coeffs, levels: Optional[int] = None) -> np.ndarray:
    x = np.array(coeffs, dtype=np.float64)
    n = _check(x)
    levels = _max_levels(n) if levels is None else min(levels, _max_levels(n))
    size = n >> (levels - 1) if levels else n
    for _ in range(levels):
        half = size // 2
        blk = x[:size, :size]
        lo, hi = blk[:half], blk[half:]
        rows = np.empty_like(blk)
        rows[0::2] = (lo + hi) * _R2
        rows[1::2] = (lo - hi) * _R2
        lo, hi = rows[:, :half], rows[:, half:]
        out = np.empty_like(blk)
        out[:, 0::2] = (lo + hi) * _R2
        out[:, 1::2] = (lo - hi) * _R2
        x[:size, :size] = out
        size *= 2
    return x


def soft_threshold(x, tau: float):
    """Proximal map of ``tau * |.|_1``."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)
