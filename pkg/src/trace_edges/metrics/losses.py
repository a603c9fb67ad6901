"""Distillation loss terms, exposed as pure functions."""

from __future__ import annotations

import numpy as np

from ..boundary import TernaryEdgeMap
from ..errors import ShapeMismatch
from ..validation import as_grid, check_same_shape


def dice_loss(target, predicted) -> float:
    """Dice loss between a ternary target and a soft edge map.

    Uncertain target pixels (label -1) carry zero weight, so only
    confidently-labelled edge/interior pixels supervise.  A target with
    no certain pixels, or one where neither side has any mass, scores 0.
    """
    grid = target.grid if isinstance(target, TernaryEdgeMap) else target
    t = as_grid(grid)
    p = as_grid(predicted)
    check_same_shape(t, p)
    weight = (t != -1).astype(np.float64)
    e = np.clip(t, 0.0, 1.0)
    numer = 2.0 * float((weight * e * p).sum())
    denom = float((weight * e * e).sum() + (weight * p * p).sum())
    if denom == 0.0:
        return 0.0
    return 1.0 - numer / denom


def recon_mse(image, reconstruction) -> float:
    """Mean squared error between an image and its reconstruction."""
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(reconstruction, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))
