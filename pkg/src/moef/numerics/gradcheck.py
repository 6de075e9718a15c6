"""Central finite differences for verifying reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np


def numerical_gradient(
    f: Callable[[], float],
    x: np.ndarray,
    h: float = 1e-5,
    indices: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Estimate d f / d x by perturbing ``x`` in place.

    ``indices`` restricts the estimate to those flat positions; the returned array
    then holds one entry per index.
    """
    flat = x.reshape(-1)
    positions = np.arange(flat.size) if indices is None else np.asarray(indices)
    out = np.empty(len(positions))
    for j, pos in enumerate(positions):
        orig = flat[pos]
        flat[pos] = orig + h
        up = f()
        flat[pos] = orig - h
        down = f()
        flat[pos] = orig
        out[j] = (up - down) / (2.0 * h)
    return out if indices is not None else out.reshape(x.shape)


def directional_derivative(f: Callable[[], float], x: np.ndarray, direction: np.ndarray, h: float = 1e-5) -> float:
    orig = x.copy()
    x += h * direction
    up = f()
    x[...] = orig - h * direction
    down = f()
    x[...] = orig
    return (up - down) / (2.0 * h)


def relative_error(analytic, numeric, floor: float = 1e-10) -> float:
    """max|a - n| scaled by the larger of max|a| and max|n|.

    Normalising by the group magnitude rather than per element keeps
    near-zero gradient entries from dominating the comparison.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0), floor)
    return float(np.max(np.abs(a - n), initial=0.0) / scale)
