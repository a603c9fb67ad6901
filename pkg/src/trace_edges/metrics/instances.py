"""Instance-mask evaluation: greedy matching, AP, COCO mAP, AR@k."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..propagation import MaskSet
from ..validation import as_grid, check_same_shape

COCO_IOU_GRID = np.round(np.arange(0.50, 0.96, 0.05), 2)
RECALL_GRID = np.linspace(0.0, 1.0, 101)


@dataclass
class MatchResult:
    """Greedy match outcome: TP triples plus unmatched pred/gt indices."""

    tp: list[tuple[int, int, float]]
    fp: list[int]
    fn: list[int]


def _hard_masks(masks: MaskSet) -> list[np.ndarray]:
    return [as_grid(m) >= 0.5 for m in masks.masks]


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    check_same_shape(a, b)
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter) / float(union) if union else 0.0


def _confidence_order(masks: MaskSet) -> list[int]:
    n = len(masks.masks)
    scores = masks.scores if masks.scores is not None else [1.0] * n
    return sorted(range(n), key=lambda k: (-float(scores[k]), k))


def match_instances(preds: MaskSet, gts: MaskSet, iou_thr: float) -> MatchResult:
    """Greedy one-to-one matching in descending confidence order.

    Each prediction takes the unmatched truth of highest IoU; the pair
    counts as a true positive only when the IoU strictly exceeds the
    threshold.  Score ties break by prediction index, IoU ties by truth
    index.
    """
    if not 0.0 < iou_thr < 1.0:
        raise ValueError("iou_thr must lie in (0, 1)")
    hard_p = _hard_masks(preds)
    hard_g = _hard_masks(gts)
    if hard_p and hard_g:
        check_same_shape(hard_p[0], hard_g[0])
    taken = [False] * len(hard_g)
    tp: list[tuple[int, int, float]] = []
    fp: list[int] = []
    for pi in _confidence_order(preds):
        best_iou, best_gi = 0.0, -1
        for gi, g in enumerate(hard_g):
            if taken[gi]:
                continue
            iou = mask_iou(hard_p[pi], g)
            if iou > best_iou:
                best_iou, best_gi = iou, gi
        if best_gi >= 0 and best_iou > iou_thr:
            taken[best_gi] = True
            tp.append((pi, best_gi, best_iou))
        else:
            fp.append(pi)
    fn = [gi for gi, t in enumerate(taken) if not t]
    return MatchResult(tp=tp, fp=fp, fn=fn)


def _detection_flags(samples, iou_thr: float, max_dets: int | None = None):
    """Global confidence-ordered TP flags across a dataset.

    Returns (scores, tp_flags, n_gt) with detections sorted by descending
    score (ties by image then index), matched greedily inside their own
    image.
    """
    detections = []  # (-score, image_idx, pred_idx)
    n_gt = 0
    hard_all = []
    for img_idx, (preds, gts) in enumerate(samples):
        hard_p = _hard_masks(preds)
        hard_g = _hard_masks(gts)
        n_gt += len(hard_g)
        hard_all.append((hard_p, hard_g, [False] * len(hard_g)))
        order = _confidence_order(preds)
        if max_dets is not None:
            order = order[:max_dets]
        scores = preds.scores if preds.scores is not None else [1.0] * len(hard_p)
        for pi in order:
            detections.append((-float(scores[pi]), img_idx, pi))
    detections.sort()

    flags = np.zeros(len(detections), dtype=bool)
    out_scores = np.empty(len(detections), dtype=np.float64)
    for k, (neg_score, img_idx, pi) in enumerate(detections):
        out_scores[k] = -neg_score
        hard_p, hard_g, taken = hard_all[img_idx]
        best_iou, best_gi = 0.0, -1
        for gi, g in enumerate(hard_g):
            if taken[gi]:
                continue
            iou = mask_iou(hard_p[pi], g)
            if iou > best_iou:
                best_iou, best_gi = iou, gi
        if best_gi >= 0 and best_iou > iou_thr:
            taken[best_gi] = True
            flags[k] = True
    return out_scores, flags, n_gt


def average_precision(samples, iou_thr: float) -> float | None:
    """Area under the 101-point interpolated precision-recall curve.

    ``samples`` is a sequence of ``(predictions, truths)`` mask-set pairs,
    one per image, predictions carrying confidence scores.  Returns None
    when the dataset has no ground truth (metric undefined).
    """
    samples = list(samples)
    _, flags, n_gt = _detection_flags(samples, iou_thr)
    if n_gt == 0:
        return None
    if flags.size == 0:
        return 0.0
    tp_cum = np.cumsum(flags)
    fp_cum = np.cumsum(~flags)
    precision = tp_cum / (tp_cum + fp_cum)
    recall = tp_cum / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    interp = np.zeros(RECALL_GRID.size, dtype=np.float64)
    for k, r in enumerate(RECALL_GRID):
        idx = np.searchsorted(recall, r, side="left")
        interp[k] = envelope[idx] if idx < envelope.size else 0.0
    return float(interp.mean())


def map_coco(samples) -> float | None:
    """Mean AP over the ten IoU thresholds 0.50, 0.55, ..., 0.95."""
    samples = list(samples)
    aps = [average_precision(samples, float(t)) for t in COCO_IOU_GRID]
    if any(ap is None for ap in aps):
        return None
    return float(np.mean(aps))


def average_recall(samples, max_dets: int = 100) -> float | None:
    """Recall averaged over the COCO IoU grid with top-k detections kept."""
    samples = list(samples)
    recalls = []
    for thr in COCO_IOU_GRID:
        _, flags, n_gt = _detection_flags(samples, float(thr), max_dets=max_dets)
        if n_gt == 0:
            return None
        recalls.append(float(flags.sum()) / n_gt)
    return float(np.mean(recalls))
