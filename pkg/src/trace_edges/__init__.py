"""Decode instance edges from diffusion self-attention stacks.

The pipeline reads multi-timestep attention containers, selects the step
where instance structure emerges, scores boundaries from opposite-
neighbour attention divergence, and refines segmentation masks by
edge-guided random-walk propagation.  A synthetic softmax-family oracle
and a full evaluation suite (ODS/OIS/clDice, AP/mAP/AR, PQ/SQ/RQ) round
out the package.
"""

from .aggregation import AggregatedAttention, aggregate
from .boundary import TernaryEdgeMap, boundary_divergence, ternarize
from .emergence import (
    DivergenceMetric,
    EmergenceResult,
    map_divergence,
    row_kl,
    select_emergence_step,
)
from .errors import TraceEdgesError
from .estimators import BoundaryScorer, EdgeGuidedMaskRefiner, EmergenceStepSelector
from .propagation import (
    AffinityParams,
    MaskSet,
    connected_components,
    merge_masks,
    propagate,
    sparse_affinity,
    upscale_edges,
)
from .synthetic import (
    GammaSchedule,
    SimilarityField,
    entropy_derivative,
    fisher_info,
    kl_second_order_check,
    row_entropy,
    smoothstep_schedule,
    synth_attention,
    synth_two_instance_field,
)
from .tensor_io import (
    AttentionBlock,
    AttentionStack,
    PanopticLabelMap,
    read_attention_stack,
    read_mask_pgm,
    read_panoptic,
    write_attention_stack,
    write_mask_pgm,
    write_panoptic,
)

__version__ = "0.1.0"

__all__ = [
    "AffinityParams",
    "AggregatedAttention",
    "AttentionBlock",
    "AttentionStack",
    "BoundaryScorer",
    "DivergenceMetric",
    "EdgeGuidedMaskRefiner",
    "EmergenceResult",
    "EmergenceStepSelector",
    "GammaSchedule",
    "MaskSet",
    "PanopticLabelMap",
    "SimilarityField",
    "TernaryEdgeMap",
    "TraceEdgesError",
    "aggregate",
    "boundary_divergence",
    "connected_components",
    "entropy_derivative",
    "fisher_info",
    "kl_second_order_check",
    "map_divergence",
    "merge_masks",
    "propagate",
    "read_attention_stack",
    "read_mask_pgm",
    "read_panoptic",
    "row_entropy",
    "row_kl",
    "select_emergence_step",
    "smoothstep_schedule",
    "sparse_affinity",
    "synth_attention",
    "synth_two_instance_field",
    "ternarize",
    "upscale_edges",
    "write_attention_stack",
    "write_mask_pgm",
    "write_panoptic",
]
