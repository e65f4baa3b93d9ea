"""Semantic segmentation from serialized diffusion-model attention.

The package turns an on-disk activation bundle (per-head cross-attention
maps, head output projections, self-attention maps, one dense feature, and
token/class metadata) into a segmentation mask. Heads are mixed per pixel
by their contribution to the layer output, layers by their resemblance to
a pseudo self-attention map, and the merged class scores are rescaled per
pixel, renormalized per class, sharpened with self-attention, and argmaxed
under a background rule.
"""

from .aggregation import (
    aggregate_heads,
    aggregate_layers,
    head_weights,
    layer_weights,
    pseudo_self_attention,
    sum_head_outputs,
)
from .bench import build_bench_bundle, run_bench
from .bundle import (
    ActivationBundle,
    ClassEntry,
    CrossLayer,
    DenseFeature,
    SelfLayer,
    TokenEntry,
    load_bundle,
    read_mask,
    validate_bundle,
    write_bundle,
    write_mask,
)
from .config import HEAD_METRICS, LAYER_METRICS, EngineConfig
from .correlation import (
    PipelineResult,
    aggregate_self_attention,
    label_pixels,
    merge_token_columns,
    per_pixel_rescale,
    per_token_renormalize,
    run_pipeline,
    segment,
    self_attention_refine,
)
from .errors import (
    AttnsegError,
    InvalidScoresError,
    InvalidShapeError,
    InvalidSpecError,
    InvalidValueError,
    ManifestSchemaError,
    MissingFileError,
    NoContentTokensError,
    NonStochasticRowsError,
    ShapeMismatchError,
    UnknownClassIdError,
    UnsupportedError,
)
from .evaluate import EvalReport, compute_iou, compute_miou, load_class_ids
from .fixture import (
    FixtureSpec,
    fixture_internals,
    generate_fixture,
    planted_labels,
    planted_mask,
    splitmix64_values,
    stream_seed,
)
from .maps import STAGES, GlobalAttentionMap, SegmentationMask, resize_nearest_labels
from .oracle import oracle_segment
from .tensor import Tensor, dot, resize_bilinear, resize_pairwise, softmax_rows

__version__ = "0.1.0"

__all__ = [
    "ActivationBundle",
    "AttnsegError",
    "ClassEntry",
    "CrossLayer",
    "DenseFeature",
    "EngineConfig",
    "EvalReport",
    "FixtureSpec",
    "GlobalAttentionMap",
    "HEAD_METRICS",
    "InvalidScoresError",
    "InvalidShapeError",
    "InvalidSpecError",
    "InvalidValueError",
    "LAYER_METRICS",
    "ManifestSchemaError",
    "MissingFileError",
    "NoContentTokensError",
    "NonStochasticRowsError",
    "PipelineResult",
    "STAGES",
    "SegmentationMask",
    "SelfLayer",
    "ShapeMismatchError",
    "Tensor",
    "TokenEntry",
    "UnknownClassIdError",
    "UnsupportedError",
    "aggregate_heads",
    "aggregate_layers",
    "aggregate_self_attention",
    "build_bench_bundle",
    "compute_iou",
    "compute_miou",
    "load_class_ids",
    "dot",
    "fixture_internals",
    "generate_fixture",
    "head_weights",
    "label_pixels",
    "layer_weights",
    "load_bundle",
    "merge_token_columns",
    "oracle_segment",
    "per_pixel_rescale",
    "per_token_renormalize",
    "planted_labels",
    "planted_mask",
    "pseudo_self_attention",
    "read_mask",
    "resize_bilinear",
    "resize_nearest_labels",
    "resize_pairwise",
    "run_bench",
    "run_pipeline",
    "segment",
    "self_attention_refine",
    "softmax_rows",
    "splitmix64_values",
    "stream_seed",
    "sum_head_outputs",
    "validate_bundle",
    "write_bundle",
    "write_mask",
]
