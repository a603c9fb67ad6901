"""Evaluation math: edge quality, instance AP/AR, panoptic quality, losses."""

from .edges import (
    EdgeEvalCurve,
    cl_dice,
    edge_pr_curve,
    gt_boundaries_from_panoptic,
    ods,
    ois,
    zhang_suen_thin,
)
from .instances import (
    MatchResult,
    average_precision,
    average_recall,
    map_coco,
    match_instances,
)
from .losses import dice_loss, recon_mse
from .panoptic import PanopticResult, panoptic_quality, panoptic_stats, summarize_panoptic

__all__ = [
    "EdgeEvalCurve",
    "MatchResult",
    "PanopticResult",
    "average_precision",
    "average_recall",
    "cl_dice",
    "dice_loss",
    "edge_pr_curve",
    "gt_boundaries_from_panoptic",
    "map_coco",
    "match_instances",
    "ods",
    "ois",
    "panoptic_quality",
    "panoptic_stats",
    "recon_mse",
    "summarize_panoptic",
    "zhang_suen_thin",
]
