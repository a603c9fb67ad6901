"""Input validation helpers used across the library and the estimators."""

from __future__ import annotations

import numpy as np

from .errors import LengthMismatch, NonStochastic, ShapeMismatch

ROW_SUM_TOL = 1e-4


def as_grid(values, dtype=np.float64) -> np.ndarray:
    """Coerce to a 2-D array, rejecting anything that is not a raster."""
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D raster, got ndim={arr.ndim}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")


def check_unit_interval(arr: np.ndarray, what: str = "values") -> None:
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{what} must lie in [0, 1]")


def check_probability_row(p: np.ndarray, tol: float = ROW_SUM_TOL) -> None:
    """Entries non-negative and summing to 1 within ``tol``."""
    if p.ndim != 1:
        raise LengthMismatch(f"expected a 1-D row, got ndim={p.ndim}")
    if p.size == 0:
        raise LengthMismatch("empty probability row")
    if p.min() < -1e-12:
        raise ValueError("probability row has negative entries")
    s = float(p.sum())
    if abs(s - 1.0) > tol:
        raise ValueError(f"probability row sums to {s:.6f}, not 1 within {tol}")


def check_row_stochastic(mat: np.ndarray, tol: float = ROW_SUM_TOL) -> None:
    """Every row of ``mat`` is a probability distribution within ``tol``."""
    if mat.ndim != 2:
        raise ShapeMismatch(f"expected a matrix, got ndim={mat.ndim}")
    if mat.size and mat.min() < -1e-12:
        raise NonStochastic("matrix has negative entries")
    sums = mat.sum(axis=1, dtype=np.float64)
    dev = float(np.max(np.abs(sums - 1.0))) if sums.size else 0.0
    if dev > tol:
        raise NonStochastic(f"row sums deviate from 1 by {dev:.2e} (> {tol})")


def logical_cores() -> int:
    import os

    return os.cpu_count() or 1
