"""Fuse per-block self-attention maps of mixed resolutions into one map.

Attention blocks taken at different spatial widths are upsampled to the
finest width and averaged.  Query pixels replicate their coarse row by
nearest neighbour; key columns are replicated the same way and divided by
the squared upsampling factor so every row stays a probability
distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, IncompatibleWidths
from .tensor_io import AttentionBlock
from .validation import check_row_stochastic


@dataclass
class AggregatedAttention:
    """A single fused row-stochastic map at width ``width``."""

    width: int
    map: np.ndarray  # float64, shape (width**2, width**2)


def aggregate(blocks, target_width: int | None = None) -> AggregatedAttention:
    """Average attention blocks after nearest-neighbour upsampling.

    For each fine query pixel the output row is the mean over blocks of
    the corresponding coarse row, its key mass spread uniformly over the
    replicated fine keys.  Output rows are renormalized to sum exactly
    to 1, so mild float drift in the inputs cannot accumulate.
    """
    blocks = list(blocks)
    if not blocks:
        raise EmptyInput("no attention blocks to aggregate")
    widths = [b.width for b in blocks]
    w_max = max(widths) if target_width is None else int(target_width)
    for w in widths:
        if w <= 0 or w_max % w:
            raise IncompatibleWidths(f"width {w} does not divide target {w_max}")

    n_fine = w_max * w_max
    acc = np.zeros((n_fine, n_fine), dtype=np.float64)
    for blk in blocks:
        check_row_stochastic(np.asarray(blk.map))
        delta = w_max // blk.width
        if delta == 1:
            acc += np.asarray(blk.map, dtype=np.float64)
            continue
        coarse = np.arange(w_max) // delta
        idx = (coarse[:, None] * blk.width + coarse[None, :]).ravel()
        up = np.asarray(blk.map, dtype=np.float64)[np.ix_(idx, idx)]
        acc += up / (delta * delta)
    acc /= len(blocks)
    acc /= acc.sum(axis=1, keepdims=True)
    return AggregatedAttention(width=w_max, map=acc)


def single_block(sa: AggregatedAttention) -> AttentionBlock:
    """View an aggregated map as a float32 attention block."""
    return AttentionBlock(width=sa.width, map=sa.map.astype(np.float32))
