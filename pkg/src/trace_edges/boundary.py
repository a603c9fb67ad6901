"""Turn an instance-aware attention map into boundary scores and labels.

Neighbouring pixels inside one instance attend almost identically, while
pixels across a boundary diverge sharply.  The per-pixel score sums the
KL divergence between the attention rows of opposite neighbours; scores
are then thresholded at one standard deviation around the mean into
edge / interior / uncertain labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import AggregatedAttention
from .emergence import DEFAULT_EPSILON, _rows_kl
from .errors import TooSmall
from .tensor_io import write_mask_pgm, read_mask_pgm

FOUR = "four"
EIGHT = "eight"

# Offsets of the "forward" member of each opposite pair; the partner is
# the negation.  Order fixes the deterministic accumulation order.
_PAIRS = {
    FOUR: [(1, 0), (0, 1)],
    EIGHT: [(1, 0), (0, 1), (1, 1), (1, -1)],
}


@dataclass
class TernaryEdgeMap:
    """Per-pixel labels: edge=1, interior=0, uncertain=-1."""

    grid: np.ndarray  # int8, shape (w, w)
    mu: float
    sigma: float


def boundary_divergence(
    sa: AggregatedAttention,
    neighborhood: str = FOUR,
    epsilon: float = DEFAULT_EPSILON,
) -> np.ndarray:
    """Opposite-neighbour KL score per pixel.

    Interior pixels sum KL(row below || row above) and KL(row right ||
    row left); the eight-neighbourhood adds the two diagonal pairs.
    Raster-border pixels keep only the pairs whose both members exist.
    """
    if neighborhood not in _PAIRS:
        raise ValueError(f"unknown neighborhood {neighborhood!r}")
    w = sa.width
    if w < 3:
        raise TooSmall(f"need width >= 3, got {w}")
    rows = np.asarray(sa.map, dtype=np.float64).reshape(w, w, -1)
    scores = np.zeros((w, w), dtype=np.float64)
    for dy, dx in _PAIRS[neighborhood]:
        # valid centre pixels: both (y+dy, x+dx) and (y-dy, x-dx) in range
        ys = slice(abs(dy), w - abs(dy)) if dy else slice(None)
        xs = slice(abs(dx), w - abs(dx)) if dx else slice(None)
        fwd = rows[_shift(ys, dy), _shift(xs, dx)].reshape(-1, w * w)
        bwd = rows[_shift(ys, -dy), _shift(xs, -dx)].reshape(-1, w * w)
        kl = _rows_kl(fwd, bwd, epsilon)
        scores[ys, xs] += kl.reshape(scores[ys, xs].shape)
    return scores


def _shift(sl: slice, d: int) -> slice:
    if sl == slice(None):
        return sl
    return slice(sl.start + d, sl.stop + d)


def ternarize(scores: np.ndarray) -> TernaryEdgeMap:
    """Label pixels against mean +/- population standard deviation.

    Strictly above ``mu + sigma`` is edge (1), strictly below
    ``mu - sigma`` is interior (0), the band between is uncertain (-1).
    A constant score map therefore comes out all-uncertain.
    """
    scores = np.asarray(scores, dtype=np.float64)
    mu = float(scores.mean())
    sigma = float(scores.std())
    grid = np.full(scores.shape, -1, dtype=np.int8)
    grid[scores > mu + sigma] = 1
    grid[scores < mu - sigma] = 0
    return TernaryEdgeMap(grid=grid, mu=mu, sigma=sigma)


# PGM byte codes for the three labels.
_TERNARY_CODE = {0: 0, -1: 128, 1: 255}
_TERNARY_DECODE = {0: 0, 128: -1, 255: 1}


def write_ternary_pgm(ternary: TernaryEdgeMap, path) -> None:
    """Serialize labels as 8-bit PGM with {interior:0, uncertain:128, edge:255}."""
    codes = np.zeros(ternary.grid.shape, dtype=np.float64)
    for label, code in _TERNARY_CODE.items():
        codes[ternary.grid == label] = code / 255.0
    write_mask_pgm(codes, path)


def read_ternary_pgm(path) -> np.ndarray:
    """Read a ternary label PGM back into an int8 grid of {-1, 0, 1}."""
    values = np.rint(read_mask_pgm(path) * 255.0).astype(np.int64)
    grid = np.full(values.shape, -2, dtype=np.int8)
    for code, label in _TERNARY_DECODE.items():
        grid[values == code] = label
    if (grid == -2).any():
        bad = sorted(set(values[grid == -2].tolist()))
        raise ValueError(f"not a ternary edge PGM; unexpected byte values {bad}")
    return grid
