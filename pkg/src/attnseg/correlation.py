"""Turn a raw global attention map into semantic correlation and a mask.

The raw map carries one column per prompt token. Stages, in fixed order:
merge token columns into class columns (dropping special and stop tokens),
rescale each pixel's class scores to relative shares, min-max renormalize
each class column, sharpen with aggregated self-attention, then argmax with
a background rule. The stage tag on each map enforces the order.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .aggregation import (
    aggregate_heads,
    aggregate_layers,
    head_weights,
    layer_weights,
    pseudo_self_attention,
)
from .bundle import ActivationBundle, ClassEntry, SelfLayer, TokenEntry
from .config import EngineConfig
from .errors import (
    InvalidScoresError,
    InvalidShapeError,
    NoContentTokensError,
    ShapeMismatchError,
    UnsupportedError,
)
from .maps import GlobalAttentionMap, SegmentationMask, resize_nearest_labels
from .tensor import Tensor, resize_pairwise


def _expect_stage(m: GlobalAttentionMap, allowed: tuple[str, ...], op: str) -> None:
    if m.stage not in allowed:
        raise InvalidScoresError(
            f"{op} expects stage in {allowed}, got {m.stage!r}"
        )


def merge_token_columns(
    raw: GlobalAttentionMap,
    tokens: Sequence[TokenEntry],
    classes: Sequence[ClassEntry],
) -> GlobalAttentionMap:
    """Average content-token columns per class; drop special and stop columns.

    Output columns are ordered by ascending class_id so later argmax
    tie-breaking resolves toward the lower id regardless of declaration
    order. Classes with several tokens (multi-word names, duplicated
    prompts) contribute the arithmetic mean of their columns.
    """
    _expect_stage(raw, ("raw",), "merge_token_columns")
    if len(tokens) != raw.scores.shape[1]:
        raise ShapeMismatchError(
            f"{len(tokens)} tokens but {raw.scores.shape[1]} raw columns"
        )
    by_class: dict[int, list[int]] = {}
    for tok in tokens:
        if tok.category == "content":
            by_class.setdefault(tok.class_id, []).append(tok.index)
    if not by_class:
        raise NoContentTokensError("no content tokens to merge")

    ordered = sorted(entry.class_id for entry in classes)
    missing = [cid for cid in ordered if cid not in by_class]
    if missing:
        raise NoContentTokensError(
            f"declared classes {missing} have no content tokens"
        )

    scores = raw.scores.array.astype(np.float64)
    merged = np.stack(
        [scores[:, by_class[cid]].mean(axis=1) for cid in ordered], axis=1
    )
    return GlobalAttentionMap(
        scores=Tensor(merged),
        stage="merged",
        resolution=raw.resolution,
        class_ids=tuple(ordered),
    )


def per_pixel_rescale(m: GlobalAttentionMap) -> GlobalAttentionMap:
    """Divide each pixel's class scores by their sum (relative shares).

    Scale-invariant per pixel by construction. A degenerate all-zero pixel
    row becomes uniform 1/classes to stay row-stochastic.
    """
    _expect_stage(m, ("merged",), "per_pixel_rescale")
    arr = m.scores.array
    if (arr < 0).any():
        i, q = (int(v) for v in np.argwhere(arr < 0)[0])
        raise InvalidScoresError(
            f"negative score {arr[i, q]} at pixel {i}, column {q}"
        )
    scores = arr.astype(np.float64)
    sums = scores.sum(axis=1, keepdims=True)
    uniform = 1.0 / scores.shape[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        rescaled = np.where(sums > 0, scores / sums, uniform)
    return GlobalAttentionMap(
        scores=Tensor(rescaled),
        stage="rescaled",
        resolution=m.resolution,
        class_ids=m.class_ids,
    )


def per_token_renormalize(m: GlobalAttentionMap) -> GlobalAttentionMap:
    """Min-max normalize each class column to span exactly [0, 1].

    A constant column carries no spatial evidence and collapses to zeros.
    Accepts a merged-stage map for the no-rescale reference mode.
    """
    _expect_stage(m, ("merged", "rescaled"), "per_token_renormalize")
    scores = m.scores.array.astype(np.float64)
    lo = scores.min(axis=0, keepdims=True)
    hi = scores.max(axis=0, keepdims=True)
    span = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        renorm = np.where(span > 0, (scores - lo) / span, 0.0)
    return GlobalAttentionMap(
        scores=Tensor(renorm),
        stage="renormalized",
        resolution=m.resolution,
        class_ids=m.class_ids,
    )


def aggregate_self_attention(
    self_layers: Sequence[SelfLayer],
    weights: Tensor,
    target: tuple[int, int],
) -> Tensor:
    """Weighted sum of self maps, each pairwise-resized to the target grid."""
    if weights.shape != (len(self_layers),):
        raise InvalidShapeError(
            f"weights {weights.shape} do not match {len(self_layers)} self layers"
        )
    pixels = int(target[0]) * int(target[1])
    total = np.zeros((pixels, pixels))
    for layer, w in zip(self_layers, weights.array):
        resized = resize_pairwise(layer.map, (layer.height, layer.width), target)
        total += float(w) * resized.array.astype(np.float64)
    return Tensor(total)


def self_attention_refine(
    m: GlobalAttentionMap,
    self_layers: Sequence[SelfLayer],
    weights: Tensor,
    steps: int,
) -> GlobalAttentionMap:
    """Sharpen class columns by repeated multiplication with aggregated self-attention.

    The aggregated map S is row-stochastic, so each step is a per-pixel
    convex mix within each column and values stay inside the column's range.
    steps=0 re-tags the map without touching the scores.
    """
    _expect_stage(m, ("renormalized",), "self_attention_refine")
    if steps < 0:
        raise InvalidShapeError(f"steps must be >= 0, got {steps}")
    scores = m.scores.array.astype(np.float64)
    if steps > 0:
        s = aggregate_self_attention(self_layers, weights, m.resolution)
        s64 = s.array.astype(np.float64)
        for _ in range(steps):
            scores = s64 @ scores
    return GlobalAttentionMap(
        scores=Tensor(scores),
        stage="refined",
        resolution=m.resolution,
        class_ids=m.class_ids,
    )


def label_pixels(
    m: GlobalAttentionMap,
    classes: Sequence[ClassEntry],
    bg_threshold: float,
    image_size: tuple[int, int],
) -> SegmentationMask:
    """Argmax class per pixel with a background rule, at image resolution.

    Foreground score is the max over non-background class columns (ties
    resolve to the lower class_id). The background score is the larger of
    the threshold and every background-flagged class score. A pixel is
    labeled 0 when background strictly exceeds foreground. The grid-level
    labels are nearest-neighbor upsampled, never interpolated.
    """
    _expect_stage(m, ("refined",), "label_pixels")
    if m.class_ids is None:
        raise InvalidScoresError("label_pixels needs class columns")
    flags = {entry.class_id: entry.is_background for entry in classes}
    unknown = [cid for cid in m.class_ids if cid not in flags]
    if unknown:
        raise InvalidScoresError(f"columns reference undeclared classes {unknown}")

    scores = m.scores.array
    fg_cols = [i for i, cid in enumerate(m.class_ids) if not flags[cid]]
    bg_cols = [i for i, cid in enumerate(m.class_ids) if flags[cid]]

    pixels = scores.shape[0]
    bg_score = np.full(pixels, np.float32(bg_threshold))
    if bg_cols:
        bg_score = np.maximum(bg_score, scores[:, bg_cols].max(axis=1))

    labels = np.zeros(pixels, dtype=np.int32)
    if fg_cols:
        fg = scores[:, fg_cols]
        best = fg.argmax(axis=1)          # first max: lowest class_id wins ties
        fg_ids = np.asarray([m.class_ids[i] for i in fg_cols], dtype=np.int32)
        labels = fg_ids[best]
        labels[bg_score > fg.max(axis=1)] = 0
    grid = labels.reshape(m.resolution)
    return SegmentationMask(labels=resize_nearest_labels(grid, image_size))


@dataclass(frozen=True)
class PipelineResult:
    """Every intermediate of one segmentation run, keyed by stage."""

    stages: dict[str, GlobalAttentionMap]
    mask: SegmentationMask
    head_weights: tuple[Tensor, ...]
    self_weights: Tensor
    cross_weights: Tensor
    pseudo: Tensor | None


def _pairing(config: EngineConfig, n_cross: int, n_self: int) -> tuple[int, ...]:
    if config.layer_pairing is None:
        if n_cross != n_self:
            raise ShapeMismatchError(
                f"default ordinal pairing needs equal layer counts, got "
                f"{n_cross} cross vs {n_self} self; set layer_pairing explicitly"
            )
        return tuple(range(n_cross))
    pairing = config.layer_pairing
    if len(pairing) != n_cross:
        raise ShapeMismatchError(
            f"layer_pairing lists {len(pairing)} entries for {n_cross} cross layers"
        )
    bad = [i for i in pairing if not 0 <= i < n_self]
    if bad:
        raise ShapeMismatchError(
            f"layer_pairing references self layers {bad}, have {n_self}"
        )
    return pairing


def _cross_weights(self_weights: np.ndarray, pairing: tuple[int, ...]) -> np.ndarray:
    picked = self_weights[list(pairing)]
    total = picked.sum()
    if total > 0:
        return picked / total
    return np.full(len(pairing), 1.0 / len(pairing))


def run_pipeline(bundle: ActivationBundle, config: EngineConfig) -> PipelineResult:
    """Run the full pipeline and keep every stage for inspection."""
    target = _target_resolution(bundle, config)

    per_layer_maps: list[Tensor] = []
    resolutions: list[tuple[int, int]] = []
    hw: list[Tensor] = []
    for layer in bundle.cross_layers:
        w = head_weights(layer.head_out, config.head_metric)
        hw.append(w)
        per_layer_maps.append(aggregate_heads(layer.attn, w))
        resolutions.append((layer.height, layer.width))

    pseudo = None
    pseudo_size = None
    if config.layer_metric != "uniform":
        feat = bundle.dense_feature
        pseudo = pseudo_self_attention(feat.feat)
        pseudo_size = (feat.height, feat.width)
    self_w = layer_weights(
        bundle.self_layers,
        pseudo,
        pseudo_size,
        config.layer_metric,
        config.epsilon,
    )

    pairing = _pairing(config, len(bundle.cross_layers), len(bundle.self_layers))
    cross_w = Tensor(_cross_weights(self_w.array.astype(np.float64), pairing))

    stages: dict[str, GlobalAttentionMap] = {}
    raw = aggregate_layers(per_layer_maps, resolutions, cross_w, target)
    stages["raw"] = raw
    merged = merge_token_columns(raw, bundle.tokens, bundle.classes)
    stages["merged"] = merged
    if config.rescale:
        current = per_pixel_rescale(merged)
        stages["rescaled"] = current
    else:
        current = merged
    renorm = per_token_renormalize(current)
    stages["renormalized"] = renorm
    refined = self_attention_refine(
        renorm, bundle.self_layers, self_w, config.refinement_steps
    )
    stages["refined"] = refined
    mask = label_pixels(refined, bundle.classes, config.bg_threshold, bundle.image_size)
    return PipelineResult(
        stages=stages,
        mask=mask,
        head_weights=tuple(hw),
        self_weights=self_w,
        cross_weights=cross_w,
        pseudo=pseudo,
    )


def _target_resolution(bundle: ActivationBundle, config: EngineConfig) -> tuple[int, int]:
    tr = config.target_resolution
    if tr == "max":
        return (
            max(layer.height for layer in bundle.cross_layers),
            max(layer.width for layer in bundle.cross_layers),
        )
    if isinstance(tr, tuple):
        return tr
    raise UnsupportedError(f"unknown target_resolution policy {tr!r}")


def segment(bundle: ActivationBundle, config: EngineConfig | None = None) -> SegmentationMask:
    """Bundle in, segmentation mask out; the one-call front door."""
    if config is None:
        config = EngineConfig()
    return run_pipeline(bundle, config).mask
