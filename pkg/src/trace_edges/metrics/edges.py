"""Edge-quality evaluation: PR sweeps, ODS/OIS, and skeleton overlap."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from ..tensor_io import PanopticLabelMap
from ..validation import as_grid, check_same_shape

THRESHOLDS = np.round(np.arange(1, 101) * 0.01, 2)


def gt_boundaries_from_panoptic(pan: PanopticLabelMap) -> np.ndarray:
    """Binary boundary raster: 1 where any 4-neighbour has another id."""
    pan.validate()
    grid = as_grid(pan.grid, dtype=np.int64)
    edge = np.zeros(grid.shape, dtype=bool)
    edge[1:, :] |= grid[1:, :] != grid[:-1, :]
    edge[:-1, :] |= grid[:-1, :] != grid[1:, :]
    edge[:, 1:] |= grid[:, 1:] != grid[:, :-1]
    edge[:, :-1] |= grid[:, :-1] != grid[:, 1:]
    return edge.astype(np.float64)


@dataclass
class EdgeEvalCurve:
    """Per-threshold precision/recall/F1 plus the raw match counts."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    tp: np.ndarray
    n_pred: np.ndarray
    n_gt: int


def _greedy_match_count(pred_pts, gt_pts, tolerance: int) -> int:
    """One-to-one matches between point sets within a Chebyshev ball.

    Predicted pixels are visited in raster order; each takes the nearest
    unmatched ground-truth pixel (ties by raster order).
    """
    if not len(pred_pts) or not len(gt_pts):
        return 0
    gt = np.asarray(gt_pts)
    taken = np.zeros(len(gt), dtype=bool)
    matched = 0
    for py, px in pred_pts:
        cheb = np.maximum(np.abs(gt[:, 0] - py), np.abs(gt[:, 1] - px))
        cheb = np.where(taken, np.iinfo(np.int64).max, cheb)
        k = int(np.argmin(cheb))
        if cheb[k] <= tolerance:
            taken[k] = True
            matched += 1
    return matched


def edge_pr_curve(pred, gt, tolerance_px: int = 0) -> EdgeEvalCurve:
    """Sweep 100 thresholds over a soft edge map against binary truth.

    At each threshold the prediction binarizes as ``pred >= t``.  With
    zero tolerance a true positive is an exact pixel hit; with positive
    tolerance predicted pixels match distinct ground-truth pixels within
    the given Chebyshev distance, greedily one-to-one.
    """
    if tolerance_px < 0:
        raise ValueError("tolerance_px must be >= 0")
    p = as_grid(pred)
    g = as_grid(gt)
    check_same_shape(p, g)
    g_bin = g >= 0.5
    n_gt = int(g_bin.sum())
    gt_pts = np.argwhere(g_bin)

    tps = np.zeros(THRESHOLDS.size, dtype=np.int64)
    n_preds = np.zeros(THRESHOLDS.size, dtype=np.int64)
    for k, thr in enumerate(THRESHOLDS):
        p_bin = p >= thr
        n_preds[k] = int(p_bin.sum())
        if tolerance_px == 0:
            tps[k] = int(np.logical_and(p_bin, g_bin).sum())
        else:
            tps[k] = _greedy_match_count(np.argwhere(p_bin), gt_pts, tolerance_px)

    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(n_preds > 0, tps / np.maximum(n_preds, 1), 0.0)
        recall = np.where(n_gt > 0, tps / max(n_gt, 1), 0.0)
    denom = precision + recall
    f1 = np.where(denom > 0, 2.0 * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
    return EdgeEvalCurve(
        thresholds=THRESHOLDS.copy(),
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tps,
        n_pred=n_preds,
        n_gt=n_gt,
    )


def ods(curves) -> float:
    """Best F1 over thresholds with counts pooled across the dataset."""
    curves = list(curves)
    if not curves:
        raise ValueError("need at least one image curve")
    tp = np.sum([c.tp for c in curves], axis=0)
    n_pred = np.sum([c.n_pred for c in curves], axis=0)
    n_gt = sum(c.n_gt for c in curves)
    denom = n_pred + n_gt
    f1 = np.where(denom > 0, 2.0 * tp / np.where(denom > 0, denom, 1), 0.0)
    return float(f1.max())


def ois(curves) -> float:
    """Mean over images of each image's best F1."""
    curves = list(curves)
    if not curves:
        raise ValueError("need at least one image curve")
    return float(np.mean([c.f1.max() for c in curves]))


# ---------------------------------------------------------------------------
# Skeleton overlap (clDice)
# ---------------------------------------------------------------------------


def zhang_suen_thin(image) -> np.ndarray:
    """Iterative morphological thinning down to a one-pixel skeleton."""
    skel = as_grid(image).astype(bool)
    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            deletable = _thin_pass(skel, step)
            if deletable.any():
                skel = skel & ~deletable
                changed = True
    return skel.astype(np.float64)


def _thin_pass(skel: np.ndarray, step: int) -> np.ndarray:
    padded = np.pad(skel, 1, constant_values=False)
    # clockwise neighbours starting north
    p2 = padded[:-2, 1:-1]
    p3 = padded[:-2, 2:]
    p4 = padded[1:-1, 2:]
    p5 = padded[2:, 2:]
    p6 = padded[2:, 1:-1]
    p7 = padded[2:, :-2]
    p8 = padded[1:-1, :-2]
    p9 = padded[:-2, :-2]
    ring = [p2, p3, p4, p5, p6, p7, p8, p9, p2]
    b = sum(n.astype(np.int8) for n in ring[:-1])
    a = sum((~ring[i] & ring[i + 1]).astype(np.int8) for i in range(8))
    if step == 0:
        corner = (~(p2 & p4 & p6)) & (~(p4 & p6 & p8))
    else:
        corner = (~(p2 & p4 & p8)) & (~(p2 & p6 & p8))
    return skel & (b >= 2) & (b <= 6) & (a == 1) & corner


def cl_dice(pred, gt) -> float:
    """Skeleton-overlap F-measure between two binary edge maps.

    Topological precision is the fraction of the predicted skeleton lying
    on the truth; sensitivity is the fraction of the truth skeleton lying
    on the prediction.  Both maps empty scores 1; exactly one empty
    scores 0.
    """
    p = as_grid(pred) >= 0.5
    g = as_grid(gt) >= 0.5
    check_same_shape(p, g)
    if not p.any() and not g.any():
        return 1.0
    if not p.any() or not g.any():
        return 0.0
    skel_p = zhang_suen_thin(p) >= 0.5
    skel_g = zhang_suen_thin(g) >= 0.5
    tprec = float((skel_p & g).sum()) / float(skel_p.sum()) if skel_p.any() else 0.0
    tsens = float((skel_g & p).sum()) / float(skel_g.sum()) if skel_g.any() else 0.0
    if tprec + tsens == 0.0:
        return 0.0
    return 2.0 * tprec * tsens / (tprec + tsens)
