"""Scikit-learn style wrappers so the pipeline composes with the ecosystem.

Each stage is a transformer: ``EmergenceStepSelector`` turns an attention
stack into the instance-aware aggregated map, ``BoundaryScorer`` turns
that map into a ternary edge map, and ``EdgeGuidedMaskRefiner`` fits on an
edge raster and refines mask sets.  All three expose ``get_params`` /
``set_params`` and clone cleanly.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .aggregation import AggregatedAttention
from .boundary import FOUR, TernaryEdgeMap, boundary_divergence, ternarize
from .emergence import DEFAULT_EPSILON, select_emergence_step
from .propagation import (
    AffinityParams,
    MaskSet,
    connected_components,
    merge_masks,
    propagate,
    split_by_components,
)
from .tensor_io import AttentionStack
from .validation import as_grid, check_unit_interval


class EmergenceStepSelector(TransformerMixin, BaseEstimator):
    """Select the step of peak inter-step divergence and emit its map.

    Parameters
    ----------
    metric : str, default "kl"
        Divergence between consecutive aggregated maps: one of "kl",
        "jsd", "mse", "mae", "entropy", "wasserstein".
    epsilon : float, default 1e-10
        Log-smoothing added to the second argument of each KL term.
    """

    def __init__(self, metric: str = "kl", epsilon: float = DEFAULT_EPSILON):
        self.metric = metric
        self.epsilon = epsilon

    def fit(self, X: AttentionStack, y=None):
        result = select_emergence_step(X, self.metric, self.epsilon)
        self.t_star_ = result.t_star
        self.divergences_ = result.per_step_divergence
        self.attention_map_ = result.selected_map
        return self

    def transform(self, X: AttentionStack) -> AggregatedAttention:
        return select_emergence_step(X, self.metric, self.epsilon).selected_map

    def fit_transform(self, X: AttentionStack, y=None) -> AggregatedAttention:
        return self.fit(X, y).attention_map_


class BoundaryScorer(TransformerMixin, BaseEstimator):
    """Score opposite-neighbour divergence and ternarize.

    Parameters
    ----------
    neighborhood : str, default "four"
        "four" for axis-aligned opposite pairs, "eight" to add diagonals.
    epsilon : float, default 1e-10
        KL log-smoothing.
    ternary : bool, default True
        Emit a :class:`TernaryEdgeMap`; set False for the raw score grid.
    """

    def __init__(
        self,
        neighborhood: str = FOUR,
        epsilon: float = DEFAULT_EPSILON,
        ternary: bool = True,
    ):
        self.neighborhood = neighborhood
        self.epsilon = epsilon
        self.ternary = ternary

    def fit(self, X: AggregatedAttention, y=None):
        return self

    def transform(self, X: AggregatedAttention) -> TernaryEdgeMap | np.ndarray:
        scores = boundary_divergence(X, self.neighborhood, self.epsilon)
        return ternarize(scores) if self.ternary else scores


class EdgeGuidedMaskRefiner(TransformerMixin, BaseEstimator):
    """Refine mask sets inside the boundaries of a fitted edge map.

    ``fit`` takes the edge raster and builds the component labelling;
    ``transform`` splits masks along components, propagates each fragment
    through the random-walk operator and merges overlapping results.

    Parameters
    ----------
    edge_threshold : float, default 0.5
        Edge value at or above which a pixel separates components.
    beta : float, default 8.0
        Hadamard exponent sharpening the affinities.
    iterations : int, default 16
        Number of transition-operator applications.
    search_radius : int, default 5
        Chebyshev radius of the affinity neighbourhood.
    tau : float, default 0.5
        IoU above which overlapping masks merge.
    split_components : bool, default True
        Cut masks along component boundaries before propagating.
    """

    def __init__(
        self,
        edge_threshold: float = 0.5,
        beta: float = 8.0,
        iterations: int = 16,
        search_radius: int = 5,
        tau: float = 0.5,
        split_components: bool = True,
    ):
        self.edge_threshold = edge_threshold
        self.beta = beta
        self.iterations = iterations
        self.search_radius = search_radius
        self.tau = tau
        self.split_components = split_components

    def _params(self) -> AffinityParams:
        params = AffinityParams(
            beta=self.beta,
            iterations=self.iterations,
            search_radius=self.search_radius,
            tau=self.tau,
        )
        params.validate()
        return params

    def fit(self, X, y=None):
        edges = as_grid(X)
        check_unit_interval(edges, "edge values")
        self._params()
        self.edges_ = edges
        self.components_ = connected_components(edges, self.edge_threshold)
        self.n_components_ = int(self.components_.max())
        return self

    def transform(self, X: MaskSet | list) -> MaskSet:
        check_is_fitted(self, "edges_")
        masks = X if isinstance(X, MaskSet) else MaskSet(masks=list(X))
        params = self._params()
        if self.split_components:
            masks = split_by_components(masks, self.components_)
        spread = propagate(masks, self.edges_, params)
        return merge_masks(spread, params.tau)
