"""Edge-guided mask refinement by random-walk propagation.

An edge map partitions the raster into regions; fragmented masks spread
inside their region through a row-stochastic transition operator built
from path affinities, and overlapping results merge by IoU.  Affinity
between two pixels is the product of ``1 - edge`` along the discrete
line between them, so edge-free paths keep affinity near 1 while any
path crossing a boundary collapses toward 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DownscaleRequested, ShapeMismatch
from .validation import as_grid, check_same_shape, check_unit_interval


@dataclass
class MaskSet:
    """Soft instance masks over a shared grid, with optional metadata."""

    masks: list[np.ndarray]
    labels: list | None = None
    scores: list | None = None

    def validate(self) -> None:
        if self.masks:
            shape = np.asarray(self.masks[0]).shape
            for m in self.masks:
                arr = as_grid(m)
                if arr.shape != shape:
                    raise ShapeMismatch("all masks must share one shape")
                check_unit_interval(arr, "mask values")
        for meta in (self.labels, self.scores):
            if meta is not None and len(meta) != len(self.masks):
                raise ShapeMismatch("metadata length must match mask count")


@dataclass
class AffinityParams:
    """Knobs of the propagation operator."""

    beta: float = 8.0
    iterations: int = 16
    search_radius: int = 5
    tau: float = 0.5

    def validate(self) -> None:
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.search_radius < 1:
            raise ValueError("search_radius must be positive")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")


def connected_components(edges, threshold: float = 0.5) -> np.ndarray:
    """4-connected labelling with edge pixels acting as separators.

    Pixels whose edge value is >= ``threshold`` become separators (id 0);
    the rest receive component ids 1..C via union-find, numbered by the
    raster-scan order of each component's first pixel.
    """
    grid = as_grid(edges)
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    height, width = grid.shape
    open_px = grid < threshold

    labels = np.zeros((height, width), dtype=np.int32)
    parent: list[int] = [0]  # provisional label 0 unused

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    next_label = 1
    for y in range(height):
        for x in range(width):
            if not open_px[y, x]:
                continue
            up = labels[y - 1, x] if y and open_px[y - 1, x] else 0
            left = labels[y, x - 1] if x and open_px[y, x - 1] else 0
            if not up and not left:
                parent.append(next_label)
                labels[y, x] = next_label
                next_label += 1
            elif up and left:
                ru, rl = find(up), find(left)
                keep, drop = min(ru, rl), max(ru, rl)
                parent[drop] = keep
                labels[y, x] = keep
            else:
                labels[y, x] = find(up or left)

    remap: dict[int, int] = {}
    out = np.zeros_like(labels)
    for y in range(height):
        for x in range(width):
            if labels[y, x]:
                root = find(labels[y, x])
                if root not in remap:
                    remap[root] = len(remap) + 1
                out[y, x] = remap[root]
    return out


def _line_offsets(dy: int, dx: int) -> list[tuple[int, int]]:
    """Bresenham raster of the segment (0,0) -> (dy,dx), inclusive."""
    ady, adx = abs(dy), abs(dx)
    sy = 1 if dy >= 0 else -1
    sx = 1 if dx >= 0 else -1
    err = adx - ady
    y = x = 0
    pts = [(0, 0)]
    while (y, x) != (dy, dx):
        e2 = 2 * err
        if e2 > -ady:
            err -= ady
            x += sx
        if e2 < adx:
            err += adx
            y += sy
        pts.append((y, x))
    return pts


def sparse_affinity(edges, params: AffinityParams | None = None) -> sp.csr_matrix:
    """Path-product affinities for pixel pairs within a Chebyshev radius.

    The affinity of pair (i, j) multiplies ``1 - edge`` over every pixel
    of the discrete line from i to j, endpoints included; each unordered
    pair is computed once and stored symmetrically.
    """
    params = params or AffinityParams()
    params.validate()
    grid = as_grid(edges)
    check_unit_interval(grid, "edge values")
    height, width = grid.shape
    n = height * width
    keep = 1.0 - grid
    radius = params.search_radius

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    # self-affinity: the trivial one-pixel path
    diag = np.arange(n)
    rows.append(diag)
    cols.append(diag)
    vals.append(keep.ravel())

    for dy in range(0, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx <= 0:
                continue  # canonical half-plane; (0,0) handled above
            y0, y1 = max(0, -dy), min(height, height - dy)
            x0, x1 = max(0, -dx), min(width, width - dx)
            if y0 >= y1 or x0 >= x1:
                continue
            prod = np.ones((y1 - y0, x1 - x0), dtype=np.float64)
            for py, px in _line_offsets(dy, dx):
                prod = prod * keep[y0 + py : y1 + py, x0 + px : x1 + px]
            ys, xs = np.mgrid[y0:y1, x0:x1]
            i = (ys * width + xs).ravel()
            j = ((ys + dy) * width + (xs + dx)).ravel()
            v = prod.ravel()
            rows.append(i)
            cols.append(j)
            vals.append(v)
            rows.append(j)
            cols.append(i)
            vals.append(v)

    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return mat.tocsr()


def transition_matrix(affinity: sp.csr_matrix, beta: float) -> sp.csr_matrix:
    """Row-normalized Hadamard power of the affinity matrix.

    Rows whose affinities all vanish (isolated edge pixels) fall back to
    a self-transition of 1, so the operator is always row-stochastic.
    """
    powered = affinity.power(beta)
    degree = np.asarray(powered.sum(axis=1)).ravel()
    inv = np.where(degree > 0, 1.0 / np.where(degree > 0, degree, 1.0), 0.0)
    trans = sp.diags(inv) @ powered
    dead = (degree <= 0).astype(np.float64)
    if dead.any():
        trans = trans + sp.diags(dead)
    return trans.tocsr()


def propagate(masks: MaskSet, edges, params: AffinityParams | None = None) -> MaskSet:
    """Spread edge-suppressed masks through the transition operator.

    Each mask is multiplied by ``1 - edge``, vectorised, pushed through
    ``iterations`` applications of the operator, then max-normalized and
    clamped to [0, 1].
    """
    params = params or AffinityParams()
    params.validate()
    masks.validate()
    grid = as_grid(edges)
    check_unit_interval(grid, "edge values")
    if masks.masks:
        check_same_shape(np.asarray(masks.masks[0]), grid)

    trans = transition_matrix(sparse_affinity(grid, params), params.beta)
    suppress = (1.0 - grid).ravel()
    out: list[np.ndarray] = []
    for mask in masks.masks:
        v = as_grid(mask).ravel() * suppress
        for _ in range(params.iterations):
            v = trans @ v
        peak = float(v.max())
        if peak > 0:
            v = np.clip(v / peak, 0.0, 1.0)
        else:
            v = np.zeros_like(v)
        out.append(v.reshape(grid.shape))
    return MaskSet(
        masks=out,
        labels=list(masks.labels) if masks.labels is not None else None,
        scores=list(masks.scores) if masks.scores is not None else None,
    )


def _binary_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter) / float(union) if union else 0.0


def merge_masks(masks: MaskSet, tau: float = 0.5) -> MaskSet:
    """Iteratively fuse the most-overlapping pair until no IoU exceeds tau.

    IoU is computed on masks binarized at 0.5.  The surviving mask is the
    elementwise max of the pair and keeps the lower index's metadata.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    masks.validate()
    work = [np.asarray(m, dtype=np.float64).copy() for m in masks.masks]
    labels = list(masks.labels) if masks.labels is not None else None
    scores = list(masks.scores) if masks.scores is not None else None

    while len(work) > 1:
        hard = [m >= 0.5 for m in work]
        best = (0.0, -1, -1)
        for i in range(len(work)):
            for j in range(i + 1, len(work)):
                iou = _binary_iou(hard[i], hard[j])
                if iou > best[0]:
                    best = (iou, i, j)
        iou, i, j = best
        if iou <= tau:
            break
        work[i] = np.maximum(work[i], work[j])
        del work[j]
        if labels is not None:
            del labels[j]
        if scores is not None:
            del scores[j]
    return MaskSet(masks=work, labels=labels, scores=scores)


def upscale_edges(edges, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour upscale of an edge map; values are preserved."""
    grid = as_grid(edges)
    h, w = grid.shape
    if height < h or width < w:
        raise DownscaleRequested(
            f"cannot shrink {h}x{w} to {height}x{width}"
        )
    ys = (np.arange(height) * h) // height
    xs = (np.arange(width) * w) // width
    return grid[np.ix_(ys, xs)]


def split_by_components(masks: MaskSet, components: np.ndarray) -> MaskSet:
    """Cut every mask along component boundaries.

    Each (mask, component) intersection keeping at least one confident
    pixel (>= 0.5) becomes its own fragment; separator pixels (component
    id 0) are dropped.  Fragments inherit their source mask's metadata.
    """
    masks.validate()
    comp = as_grid(components, dtype=np.int64)
    frags: list[np.ndarray] = []
    labels: list = []
    scores: list = []
    ids = [int(c) for c in np.unique(comp) if c > 0]
    for k, mask in enumerate(masks.masks):
        arr = as_grid(mask)
        check_same_shape(arr, comp)
        for cid in ids:
            frag = np.where(comp == cid, arr, 0.0)
            if frag.max() >= 0.5:
                frags.append(frag)
                labels.append(masks.labels[k] if masks.labels is not None else None)
                scores.append(masks.scores[k] if masks.scores is not None else None)
    return MaskSet(
        masks=frags,
        labels=labels if any(lb is not None for lb in labels) else None,
        scores=scores if any(sc is not None for sc in scores) else None,
    )
