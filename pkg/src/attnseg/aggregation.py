"""Collapse per-head and per-layer cross-attention maps into one global map.

Head weighting scores each head's projected output vector against the summed
layer output, per pixel. Layer weighting scores each self-attention map
against a pseudo self-attention map derived from a dense feature. Both
weight sets are clamped at zero and normalized to a convex combination, with
a uniform fallback when every raw score clamps to zero.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .bundle import SelfLayer
from .config import HEAD_METRICS, LAYER_METRICS
from .errors import InvalidShapeError, UnsupportedError
from .maps import GlobalAttentionMap
from .tensor import Tensor, resize_bilinear, resize_pairwise, softmax_rows


def sum_head_outputs(head_out: Tensor) -> Tensor:
    """Sum per-head projected outputs (heads, pixels, d) into (pixels, d).

    Each slice along the first axis is one head's value-projection
    contribution; their sum equals the usual concatenate-then-project
    multi-head output.
    """
    if head_out.ndim != 3:
        raise InvalidShapeError(
            f"head outputs must be (heads, pixels, d), got {head_out.shape}"
        )
    return Tensor(head_out.array.astype(np.float64).sum(axis=0))


def _normalize_rows(raw: np.ndarray) -> np.ndarray:
    """Clamp at zero and normalize rows to sum 1; all-zero rows go uniform."""
    raw = np.maximum(raw, 0.0)
    sums = raw.sum(axis=-1, keepdims=True)
    uniform = 1.0 / raw.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(sums > 0, raw / sums, uniform)


def head_weights(head_out: Tensor, metric: str = "dot") -> Tensor:
    """Per-pixel head weights (pixels, heads) from projected head outputs.

    Raw scores per pixel i and head n against the summed output O(i):
      dot     -> headvec_n(i) . O(i)
      cosine  -> dot / (|headvec_n(i)| |O(i)|), 0 when either norm is 0
      l2      -> |headvec_n(i)|  (contribution magnitude)
      uniform -> 1 (reference mode)
    Scores are clamped at 0 and normalized to sum 1 per pixel; if a pixel's
    scores all clamp to 0 the weights fall back to uniform.
    """
    if head_out.ndim != 3:
        raise InvalidShapeError(
            f"head outputs must be (heads, pixels, d), got {head_out.shape}"
        )
    if metric not in HEAD_METRICS:
        raise UnsupportedError(f"unknown head metric {metric!r}")
    heads, pixels, _ = head_out.shape
    if metric == "uniform":
        return Tensor(np.full((pixels, heads), 1.0 / heads))

    vecs = head_out.array.astype(np.float64)          # (h, P, d)
    output = vecs.sum(axis=0)                          # (P, d)
    if metric == "dot":
        raw = np.einsum("hpd,pd->ph", vecs, output)
    elif metric == "l2":
        raw = np.linalg.norm(vecs, axis=2).T           # (P, h)
    else:  # cosine
        norms = np.linalg.norm(vecs, axis=2)           # (h, P)
        out_norm = np.linalg.norm(output, axis=1)      # (P,)
        dots = np.einsum("hpd,pd->ph", vecs, output)
        denom = norms.T * out_norm[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            raw = np.where(denom > 0, dots / denom, 0.0)
    return Tensor(_normalize_rows(raw))


def aggregate_heads(attn: Tensor, weights: Tensor) -> Tensor:
    """Weighted per-pixel mix of head maps: (heads, pixels, tokens) -> (pixels, tokens)."""
    if attn.ndim != 3:
        raise InvalidShapeError(f"attention must be 3-D, got {attn.shape}")
    heads, pixels, _ = attn.shape
    if weights.shape != (pixels, heads):
        raise InvalidShapeError(
            f"weights {weights.shape} do not match attention {attn.shape}"
        )
    mixed = np.einsum(
        "ph,hpt->pt",
        weights.array.astype(np.float64),
        attn.array.astype(np.float64),
    )
    return Tensor(mixed)


def pseudo_self_attention(feat: Tensor) -> Tensor:
    """Row-stochastic pixel-affinity map from a dense feature (pixels, d_f).

    Softmax of the feature Gram matrix scaled by 1/sqrt(d_f); stands in for
    a real self-attention map when weighting layers.
    """
    if feat.ndim != 2:
        raise InvalidShapeError(f"feature must be (pixels, d_f), got {feat.shape}")
    d_f = feat.shape[1]
    grid = feat.array.astype(np.float64)
    gram = Tensor(grid @ grid.T)
    return softmax_rows(gram, 1.0 / np.sqrt(d_f))


def _layer_score(resized: np.ndarray, pseudo: np.ndarray, metric: str, epsilon: float) -> float:
    if metric == "dot":
        return float(np.dot(resized.ravel(), pseudo.ravel()))
    if metric == "mse":
        return float(1.0 / (np.mean((resized - pseudo) ** 2) + epsilon))
    # continuous IoU on the flattened maps
    denom = float(np.maximum(resized, pseudo).sum())
    if denom <= 0.0:
        return 0.0
    return float(np.minimum(resized, pseudo).sum() / denom)


def layer_weights(
    self_layers: Sequence[SelfLayer],
    pseudo: Tensor | None,
    pseudo_size: tuple[int, int] | None,
    metric: str = "dot",
    epsilon: float = 1e-8,
) -> Tensor:
    """Normalized weight per self layer from similarity to the pseudo map.

    Every self map is resized (resize_pairwise) to the pseudo map's
    resolution before scoring. Metrics: flattened dot product; inverse MSE
    1/(mse + epsilon); continuous IoU sum(min)/sum(max); uniform reference.
    Scores are clamped at 0 and normalized to sum 1, uniform on all-zero.
    """
    if not self_layers:
        raise InvalidShapeError("layer_weights needs at least one self layer")
    if metric not in LAYER_METRICS:
        raise UnsupportedError(f"unknown layer metric {metric!r}")
    k = len(self_layers)
    if metric == "uniform":
        return Tensor(np.full(k, 1.0 / k))
    if pseudo is None or pseudo_size is None:
        raise InvalidShapeError(f"metric {metric!r} needs a pseudo self-attention map")

    target = pseudo.array.astype(np.float64)
    raw = np.empty(k)
    for i, layer in enumerate(self_layers):
        resized = resize_pairwise(
            layer.map, (layer.height, layer.width), pseudo_size
        )
        raw[i] = _layer_score(
            resized.array.astype(np.float64), target, metric, epsilon
        )
    return Tensor(_normalize_rows(raw[None, :])[0])


def aggregate_layers(
    maps: Sequence[Tensor],
    resolutions: Sequence[tuple[int, int]],
    weights: Tensor,
    target: tuple[int, int],
) -> GlobalAttentionMap:
    """Weighted sum of per-layer maps after resizing each to the target grid.

    Each map is (pixels_m, tokens); its token columns are reshaped to the
    layer grid, bilinearly resized to target, and flattened back before the
    convex combination. Returns a raw-stage global map at target resolution.
    """
    if len(maps) != len(resolutions):
        raise InvalidShapeError(
            f"{len(maps)} maps but {len(resolutions)} resolutions"
        )
    if weights.shape != (len(maps),):
        raise InvalidShapeError(
            f"weights {weights.shape} do not match {len(maps)} maps"
        )
    if not maps:
        raise InvalidShapeError("aggregate_layers needs at least one map")
    tokens = maps[0].shape[1]
    dst_h, dst_w = int(target[0]), int(target[1])
    total = np.zeros((dst_h * dst_w, tokens))
    for m, (src_h, src_w), w in zip(maps, resolutions, weights.array):
        if m.ndim != 2 or m.shape != (src_h * src_w, tokens):
            raise InvalidShapeError(
                f"map shape {m.shape} does not match grid {(src_h, src_w)} "
                f"x {tokens} tokens"
            )
        planes = Tensor(
            np.ascontiguousarray(m.array.T.reshape(tokens, src_h, src_w))
        )
        resized = resize_bilinear(planes, (dst_h, dst_w))
        flat = resized.array.reshape(tokens, dst_h * dst_w).T
        total += float(w) * flat.astype(np.float64)
    return GlobalAttentionMap(
        scores=Tensor(total), stage="raw", resolution=(dst_h, dst_w)
    )
