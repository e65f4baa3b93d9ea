"""Straight-loop reference implementation of the whole segmentation pipeline.

Everything here is deliberately naive: plain Python floats, explicit nested
loops, no vectorization, no shared kernels with the optimized engine. It
exists solely as an independent oracle for equivalence testing, so any bug
would have to appear twice, in two very different shapes, to go unseen.
"""

from __future__ import annotations

import math

import numpy as np

from .bundle import ActivationBundle
from .config import EngineConfig
from .errors import ShapeMismatchError
from .maps import SegmentationMask


def _to_rows(arr) -> list[list[float]]:
    return [[float(v) for v in row] for row in np.asarray(arr)]


def _softmax_row(row: list[float], scale: float) -> list[float]:
    peak = max(v * scale for v in row)
    exps = [math.exp(v * scale - peak) for v in row]
    total = sum(exps)
    return [v / total for v in exps]


def _axis_positions(src: int, dst: int) -> list[tuple[int, int, float]]:
    # Align-corners=false sampling: centers map to (i + 0.5) * src / dst - 0.5.
    out = []
    for i in range(dst):
        pos = (i + 0.5) * src / dst - 0.5
        pos = min(max(pos, 0.0), src - 1.0)
        lo = min(int(math.floor(pos)), src - 1)
        hi = min(lo + 1, src - 1)
        out.append((lo, hi, pos - lo))
    return out

def _bilinear(plane: list[list[float]], src_h: int, src_w: int,
              dst_h: int, dst_w: int) -> list[list[float]]:
    rows = _axis_positions(src_h, dst_h)
    cols = _axis_positions(src_w, dst_w)
    out = []
    for r_lo, r_hi, r_f in rows:
        line = []
        for c_lo, c_hi, c_f in cols:
            top = plane[r_lo][c_lo] * (1 - c_f) + plane[r_lo][c_hi] * c_f
            bottom = plane[r_hi][c_lo] * (1 - c_f) + plane[r_hi][c_hi] * c_f
            line.append(top * (1 - r_f) + bottom * r_f)
        out.append(line)
    return out


def _resize_map_columns(scores: list[list[float]], src: tuple[int, int],
                        dst: tuple[int, int]) -> list[list[float]]:
    """Resize each column of a (pixels x columns) map as an (H, W) plane."""
    src_h, src_w = src
    dst_h, dst_w = dst
    columns = len(scores[0])
    out = [[0.0] * columns for _ in range(dst_h * dst_w)]
    for c in range(columns):
        plane = [
            [scores[r * src_w + q][c] for q in range(src_w)] for r in range(src_h)
        ]
        resized = _bilinear(plane, src_h, src_w, dst_h, dst_w)
        for r in range(dst_h):
            for q in range(dst_w):
                out[r * dst_w + q][c] = resized[r][q]
    return out


def _resize_pairwise(m: list[list[float]], src: tuple[int, int],
                     dst: tuple[int, int]) -> list[list[float]]:
    src_h, src_w = src
    dst_h, dst_w = dst
    n_dst = dst_h * dst_w
    if (src_h, src_w) == (dst_h, dst_w):
        resized = [row[:] for row in m]
    else:
        # First resize every source row's target plane, then every
        # destination column's source plane.
        half = []
        for row in m:
            plane = [
                [row[r * src_w + q] for q in range(src_w)] for r in range(src_h)
            ]
            out = _bilinear(plane, src_h, src_w, dst_h, dst_w)
            half.append([out[r][q] for r in range(dst_h) for q in range(dst_w)])
        resized = []
        for j in range(n_dst):
            plane = [
                [half[r * src_w + q][j] for q in range(src_w)]
                for r in range(src_h)
            ]
            out = _bilinear(plane, src_h, src_w, dst_h, dst_w)
            resized.append(
                [out[r][q] for r in range(dst_h) for q in range(dst_w)]
            )
        resized = [[resized[j][i] for j in range(n_dst)] for i in range(n_dst)]
    for row in resized:
        total = sum(row)
        if total > 0:
            for j in range(n_dst):
                row[j] /= total
        else:
            for j in range(n_dst):
                row[j] = 1.0 / n_dst
    return resized


def _clamp_normalize(raw: list[float]) -> list[float]:
    clipped = [max(v, 0.0) for v in raw]
    total = sum(clipped)
    if total > 0:
        return [v / total for v in clipped]
    return [1.0 / len(raw)] * len(raw)


def _head_weights(head_out, metric: str) -> list[list[float]]:
    heads = len(head_out)
    pixels = len(head_out[0])
    dim = len(head_out[0][0])
    weights = []
    for i in range(pixels):
        summed = [
            sum(head_out[n][i][c] for n in range(heads)) for c in range(dim)
        ]
        raw = []
        for n in range(heads):
            vec = head_out[n][i]
            if metric == "uniform":
                raw.append(1.0)
            elif metric == "dot":
                raw.append(sum(vec[c] * summed[c] for c in range(dim)))
            elif metric == "l2":
                raw.append(math.sqrt(sum(v * v for v in vec)))
            else:  # cosine
                norm_v = math.sqrt(sum(v * v for v in vec))
                norm_o = math.sqrt(sum(v * v for v in summed))
                if norm_v == 0.0 or norm_o == 0.0:
                    raw.append(0.0)
                else:
                    dot = sum(vec[c] * summed[c] for c in range(dim))
                    raw.append(dot / (norm_v * norm_o))
        weights.append(_clamp_normalize(raw))
    return weights


def _layer_score(a: list[list[float]], b: list[list[float]],
                 metric: str, epsilon: float) -> float:
    flat_a = [v for row in a for v in row]
    flat_b = [v for row in b for v in row]
    if metric == "dot":
        return sum(x * y for x, y in zip(flat_a, flat_b))
    if metric == "mse":
        mse = sum((x - y) ** 2 for x, y in zip(flat_a, flat_b)) / len(flat_a)
        return 1.0 / (mse + epsilon)
    union = sum(max(x, y) for x, y in zip(flat_a, flat_b))
    if union <= 0:
        return 0.0
    return sum(min(x, y) for x, y in zip(flat_a, flat_b)) / union


def oracle_segment(
    bundle: ActivationBundle, config: EngineConfig | None = None
) -> tuple[np.ndarray, SegmentationMask]:
    """Reference pipeline; returns refined scores and the mask."""
    if config is None:
        config = EngineConfig()

    target_h = max(layer.height for layer in bundle.cross_layers)
    target_w = max(layer.width for layer in bundle.cross_layers)

    per_layer = []
    for layer in bundle.cross_layers:
        attn = [_to_rows(plane) for plane in layer.attn.array]
        outs = [_to_rows(plane) for plane in layer.head_out.array]
        w = _head_weights(outs, config.head_metric)
        pixels = layer.height * layer.width
        mixed = [
            [
                sum(w[i][n] * attn[n][i][t] for n in range(layer.heads))
                for t in range(layer.token_count)
            ]
            for i in range(pixels)
        ]
        per_layer.append((mixed, (layer.height, layer.width)))

    # Self-layer weights from the pseudo self-attention of the dense feature.
    if config.layer_metric == "uniform":
        self_w = [1.0 / len(bundle.self_layers)] * len(bundle.self_layers)
    else:
        feat = _to_rows(bundle.dense_feature.feat.array)
        d_f = bundle.dense_feature.channels
        pseudo = [
            _softmax_row(
                [sum(a * b for a, b in zip(row, other)) for other in feat],
                1.0 / math.sqrt(d_f),
            )
            for row in feat
        ]
        pseudo_size = (bundle.dense_feature.height, bundle.dense_feature.width)
        raw = []
        for layer in bundle.self_layers:
            resized = _resize_pairwise(
                _to_rows(layer.map.array), (layer.height, layer.width), pseudo_size
            )
            raw.append(_layer_score(resized, pseudo, config.layer_metric, config.epsilon))
        self_w = _clamp_normalize(raw)

    if config.layer_pairing is None:
        if len(bundle.cross_layers) != len(bundle.self_layers):
            raise ShapeMismatchError(
                "default ordinal pairing needs equal layer counts"
            )
        pairing = list(range(len(bundle.cross_layers)))
    else:
        pairing = list(config.layer_pairing)
    picked = [self_w[j] for j in pairing]
    total = sum(picked)
    cross_w = (
        [v / total for v in picked]
        if total > 0
        else [1.0 / len(picked)] * len(picked)
    )

    # Aggregate layers on the target grid.
    pixels = target_h * target_w
    tokens = len(bundle.tokens)
    raw_map = [[0.0] * tokens for _ in range(pixels)]
    for (mixed, src), w in zip(per_layer, cross_w):
        resized = _resize_map_columns(mixed, src, (target_h, target_w))
        for i in range(pixels):
            for t in range(tokens):
                raw_map[i][t] += w * resized[i][t]

    # Merge content-token columns per class, ascending class id.
    class_ids = sorted(entry.class_id for entry in bundle.classes)
    merged = []
    for i in range(pixels):
        row = []
        for cid in class_ids:
            cols = [t.index for t in bundle.tokens
                    if t.category == "content" and t.class_id == cid]
            row.append(sum(raw_map[i][t] for t in cols) / len(cols))
        merged.append(row)

    if config.rescale:
        current = []
        for row in merged:
            total = sum(row)
            if total > 0:
                current.append([v / total for v in row])
            else:
                current.append([1.0 / len(row)] * len(row))
        merged = current

    # Min-max renormalize each class column.
    columns = len(class_ids)
    renorm = [[0.0] * columns for _ in range(pixels)]
    for c in range(columns):
        values = [merged[i][c] for i in range(pixels)]
        lo, hi = min(values), max(values)
        if hi > lo:
            for i in range(pixels):
                renorm[i][c] = (values[i] - lo) / (hi - lo)

    # Refine through the aggregated self-attention.
    scores = renorm
    if config.refinement_steps > 0:
        s = [[0.0] * pixels for _ in range(pixels)]
        for layer, w in zip(bundle.self_layers, self_w):
            resized = _resize_pairwise(
                _to_rows(layer.map.array),
                (layer.height, layer.width),
                (target_h, target_w),
            )
            for i in range(pixels):
                for j in range(pixels):
                    s[i][j] += w * resized[i][j]
        for _ in range(config.refinement_steps):
            scores = [
                [
                    sum(s[i][j] * scores[j][c] for j in range(pixels))
                    for c in range(columns)
                ]
                for i in range(pixels)
            ]

    # Label with the background rule, ties to the lower class id.
    flags = {entry.class_id: entry.is_background for entry in bundle.classes}
    fg_cols = [c for c, cid in enumerate(class_ids) if not flags[cid]]
    bg_cols = [c for c, cid in enumerate(class_ids) if flags[cid]]
    grid = []
    for i in range(pixels):
        bg = float(np.float32(config.bg_threshold))
        for c in bg_cols:
            bg = max(bg, scores[i][c])
        label, best = 0, None
        for c in fg_cols:
            if best is None or scores[i][c] > best:
                best, label = scores[i][c], class_ids[c]
        if best is None or bg > best:
            label = 0
        grid.append(label)

    # Nearest-neighbor upsample to image resolution.
    img_h, img_w = bundle.image_size
    labels = np.zeros((img_h, img_w), dtype=np.int32)
    for r in range(img_h):
        for q in range(img_w):
            src_r = (r * target_h) // img_h
            src_q = (q * target_w) // img_w
            labels[r, q] = grid[src_r * target_w + src_q]

    refined = np.array(scores, dtype=np.float64)
    return refined, SegmentationMask(labels=labels)
