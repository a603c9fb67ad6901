"""Panoptic quality: IoU>0.5 matching inside categories, PQ = SQ * RQ."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..errors import CategoryMismatch
from ..tensor_io import PanopticLabelMap
from ..validation import as_grid, check_same_shape


@dataclass
class ClassStats:
    """Running match statistics for one category."""

    iou_sum: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, other: "ClassStats") -> None:
        self.iou_sum += other.iou_sum
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn

    @property
    def sq(self) -> float:
        return self.iou_sum / self.tp if self.tp else (1.0 if self.empty else 0.0)

    @property
    def rq(self) -> float:
        denom = self.tp + 0.5 * self.fp + 0.5 * self.fn
        return self.tp / denom if denom else 1.0

    @property
    def pq(self) -> float:
        denom = self.tp + 0.5 * self.fp + 0.5 * self.fn
        return self.iou_sum / denom if denom else 1.0

    @property
    def empty(self) -> bool:
        return self.tp == 0 and self.fp == 0 and self.fn == 0


@dataclass
class PanopticResult:
    pq: float
    sq: float
    rq: float
    per_class: dict[int, ClassStats]
    pq_things: float | None
    pq_stuff: float | None
    gt_categories: set[int] = field(default_factory=set)


def _segment_categories(pan: PanopticLabelMap) -> dict[int, int]:
    return {seg_id: pan.categories[seg_id] for seg_id in pan.segment_ids()}


def _merged_thing_flags(pred: PanopticLabelMap, gt: PanopticLabelMap) -> dict[int, bool]:
    flags: dict[int, bool] = dict(gt.thing_flags)
    for cat, is_thing in pred.thing_flags.items():
        if cat in flags and flags[cat] != is_thing:
            raise CategoryMismatch(f"category {cat} is thing in one map, stuff in the other")
        flags.setdefault(cat, is_thing)
    for pan in (pred, gt):
        for seg_id, cat in _segment_categories(pan).items():
            if cat not in flags:
                raise CategoryMismatch(f"segment {seg_id} references unknown category {cat}")
    return flags


def panoptic_stats(pred: PanopticLabelMap, gt: PanopticLabelMap):
    """Per-category match statistics for one image pair.

    Segments match when they share a category and their IoU strictly
    exceeds 0.5; pixels that are void in the ground truth are excluded
    from predicted-segment areas, so unlabeled regions cannot dilute a
    match.  Returns ``(per_class_stats, gt_categories, thing_flags)``.
    """
    pred.validate()
    gt.validate()
    pred_grid = as_grid(pred.grid, dtype=np.int64)
    gt_grid = as_grid(gt.grid, dtype=np.int64)
    check_same_shape(pred_grid, gt_grid)
    thing_flags = _merged_thing_flags(pred, gt)

    pred_cats = _segment_categories(pred)
    gt_cats = _segment_categories(gt)
    valid = gt_grid != 0

    # intersection counts over (gt_id, pred_id) pairs
    pair_keys, pair_counts = np.unique(
        gt_grid.astype(np.int64) * (pred_grid.max() + 1) + pred_grid,
        return_counts=True,
    )
    inter: dict[tuple[int, int], int] = {}
    base = int(pred_grid.max()) + 1
    for key, count in zip(pair_keys.tolist(), pair_counts.tolist()):
        inter[(key // base, key % base)] = count

    gt_areas = {g: int((gt_grid == g).sum()) for g in gt_cats}
    pred_valid_areas = {
        p: int(np.logical_and(pred_grid == p, valid).sum()) for p in pred_cats
    }

    stats: dict[int, ClassStats] = defaultdict(ClassStats)
    matched_pred: set[int] = set()
    matched_gt: set[int] = set()
    for (g, p), ov in sorted(inter.items()):
        if g == 0 or p == 0:
            continue
        if gt_cats[g] != pred_cats[p]:
            continue
        union = pred_valid_areas[p] + gt_areas[g] - ov
        iou = ov / union if union else 0.0
        if iou > 0.5:
            cat = gt_cats[g]
            stats[cat].tp += 1
            stats[cat].iou_sum += iou
            matched_pred.add(p)
            matched_gt.add(g)
    for p, cat in pred_cats.items():
        if p not in matched_pred:
            stats[cat].fp += 1
    for g, cat in gt_cats.items():
        if g not in matched_gt:
            stats[cat].fn += 1
    gt_categories = set(gt_cats.values())
    return dict(stats), gt_categories, thing_flags


def summarize_panoptic(stats_list) -> PanopticResult:
    """Pool per-image statistics into dataset PQ/SQ/RQ and class splits.

    The headline numbers pool all matches into the single-formula PQ;
    the thing/stuff splits average per-class PQ over categories present
    in the ground truth.
    """
    per_class: dict[int, ClassStats] = defaultdict(ClassStats)
    gt_categories: set[int] = set()
    thing_flags: dict[int, bool] = {}
    for stats, cats, flags in stats_list:
        for cat, st in stats.items():
            per_class[cat].add(st)
        gt_categories |= cats
        for cat, is_thing in flags.items():
            if cat in thing_flags and thing_flags[cat] != is_thing:
                raise CategoryMismatch(f"category {cat} flagged both thing and stuff")
            thing_flags[cat] = is_thing

    total = ClassStats()
    for st in per_class.values():
        total.add(st)

    def class_mean(cats) -> float | None:
        values = [per_class[c].pq for c in cats if c in per_class]
        return float(np.mean(values)) if values else None

    things = {c for c in gt_categories if thing_flags.get(c, False)}
    stuff = {c for c in gt_categories if not thing_flags.get(c, True)}
    return PanopticResult(
        pq=total.pq,
        sq=total.sq,
        rq=total.rq,
        per_class=dict(per_class),
        pq_things=class_mean(things),
        pq_stuff=class_mean(stuff),
        gt_categories=gt_categories,
    )


def panoptic_quality(pred: PanopticLabelMap, gt: PanopticLabelMap) -> PanopticResult:
    """PQ/SQ/RQ with per-class and thing/stuff splits for one image pair."""
    return summarize_panoptic([panoptic_stats(pred, gt)])
