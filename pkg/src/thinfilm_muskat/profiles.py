"""Smooth profile shapes used by initial presets and test functions."""

from __future__ import annotations

import numpy as np


def smooth_bump(x: np.ndarray, center: float, width: float) -> np.ndarray:
    """Compactly supported C-infinity bump on (center - width, center + width).

    All derivatives vanish at the support edges, so finite differences of any
    order stay uniformly bounded across the contact points.  Values below
    1e-12 of the peak are clipped to exact zero: such cells carry no usable
    mass but their reciprocal masses would poison transport sensitivities.
    """
    s = (np.asarray(x, dtype=np.float64) - center) / width
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si))
    out[out < 1e-12] = 0.0
    return out


def truncated_gaussian(x: np.ndarray, center: float, sigma: float, cutoff: float = 4.0) -> np.ndarray:
    """Gaussian shifted to hit zero at |x - center| = cutoff * sigma, clipped beyond."""
    x = np.asarray(x, dtype=np.float64)
    tail = np.exp(-0.5 * cutoff**2)
    out = np.exp(-0.5 * ((x - center) / sigma) ** 2) - tail
    return np.maximum(out, 0.0)
