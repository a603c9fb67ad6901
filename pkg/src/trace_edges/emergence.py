"""Select the denoising step where instance structure emerges.

Consecutive aggregated attention maps are compared with a divergence
metric; the step ending the most divergent pair is selected.  KL is the
default; the alternatives (JSD, MSE, MAE, entropy difference, 1-D
Wasserstein) exist for ablation.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import rel_entr

from .aggregation import AggregatedAttention, aggregate
from .errors import LengthMismatch, TooFewTimesteps, WidthMismatch
from .tensor_io import AttentionStack
from .validation import check_probability_row

DEFAULT_EPSILON = 1e-10


class DivergenceMetric(str, Enum):
    KL = "kl"
    JSD = "jsd"
    MSE = "mse"
    MAE = "mae"
    ENTROPY_DIFF = "entropy"
    WASSERSTEIN1 = "wasserstein"


@dataclass
class EmergenceResult:
    """Outcome of step selection over an attention stack."""

    t_star: int
    per_step_divergence: list[tuple[int, float]]
    selected_map: AggregatedAttention


def row_kl(p, q, epsilon: float = DEFAULT_EPSILON) -> float:
    """KL divergence between two probability rows, smoothed on ``q``.

    ``epsilon`` is added to every entry of ``q`` before the log and ``q``
    is renormalized, so float32 underflow zeros cannot produce infinities.
    ``0 * log 0`` is taken as 0 and tiny negative results clamp to 0.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 1 or q.ndim != 1 or p.shape != q.shape:
        raise LengthMismatch(f"rows have shapes {p.shape} and {q.shape}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    check_probability_row(p)
    check_probability_row(q)
    qs = q + epsilon
    qs /= qs.sum()
    return max(float(rel_entr(p, qs).sum()), 0.0)


def _rows_kl(P: np.ndarray, Q: np.ndarray, epsilon: float) -> np.ndarray:
    """Row-wise KL(P_i || Q_i) for stacked probability rows."""
    Qs = Q + epsilon
    Qs = Qs / Qs.sum(axis=1, keepdims=True)
    return np.maximum(rel_entr(P, Qs).sum(axis=1), 0.0)


def _mean_row_entropy(M: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(M > 0, np.log(np.where(M > 0, M, 1.0)), 0.0)
    return float(-(M * logs).sum(axis=1).mean())


def map_divergence(
    prev: AggregatedAttention,
    curr: AggregatedAttention,
    metric: DivergenceMetric | str = DivergenceMetric.KL,
    epsilon: float = DEFAULT_EPSILON,
) -> float:
    """Divergence between two aggregated maps of equal width.

    KL and JSD reduce over query rows by the mean; MSE/MAE act on the full
    matrices; the entropy metric compares mean row entropies; Wasserstein
    treats the flattened, renormalized matrices as distributions on the
    index line.
    """
    metric = DivergenceMetric(metric)
    if prev.width != curr.width:
        raise WidthMismatch(f"widths differ: {prev.width} vs {curr.width}")
    P = np.asarray(prev.map, dtype=np.float64)
    Q = np.asarray(curr.map, dtype=np.float64)

    if metric is DivergenceMetric.KL:
        return float(_rows_kl(P, Q, epsilon).mean())
    if metric is DivergenceMetric.JSD:
        M = 0.5 * (P + Q)
        per_row = 0.5 * _rows_kl(P, M, epsilon) + 0.5 * _rows_kl(Q, M, epsilon)
        return float(per_row.mean())
    if metric is DivergenceMetric.MSE:
        return float(np.mean((P - Q) ** 2))
    if metric is DivergenceMetric.MAE:
        return float(np.mean(np.abs(P - Q)))
    if metric is DivergenceMetric.ENTROPY_DIFF:
        return abs(_mean_row_entropy(P) - _mean_row_entropy(Q))
    p = P.ravel()
    q = Q.ravel()
    p = p / p.sum()
    q = q / q.sum()
    return float(np.abs(np.cumsum(p - q)).sum())


def select_emergence_step(
    stack: AttentionStack,
    metric: DivergenceMetric | str = DivergenceMetric.KL,
    epsilon: float = DEFAULT_EPSILON,
) -> EmergenceResult:
    """Pick the timestep ending the most divergent consecutive pair.

    Ties resolve to the earliest maximum.  The returned map is the
    aggregated attention at the selected step with rows renormalized.
    """
    if len(stack.timesteps) < 2:
        raise TooFewTimesteps("need at least two timesteps to compare")
    metric = DivergenceMetric(metric)
    w_max = stack.max_width
    aggs = [aggregate(per_t, target_width=w_max) for per_t in stack.blocks]

    per_step: list[tuple[int, float]] = []
    best_idx = 1
    best_val = -np.inf
    for n in range(1, len(aggs)):
        val = map_divergence(aggs[n - 1], aggs[n], metric, epsilon)
        per_step.append((stack.timesteps[n], val))
        if val > best_val:
            best_val = val
            best_idx = n
    selected = aggs[best_idx]
    normalized = selected.map / selected.map.sum(axis=1, keepdims=True)
    return EmergenceResult(
        t_star=stack.timesteps[best_idx],
        per_step_divergence=per_step,
        selected_map=AggregatedAttention(width=selected.width, map=normalized),
    )
