"""Deterministic synthetic activation bundles with a known ground truth.

Fixtures plant a row-band class partition into every tensor of a bundle:
cross-attention queries and content-token keys share per-class directions
(so each region attends to its own token), self-attention maps and the
dense feature are block-structured on the same regions, and everything else
is reproducible noise. The generator proves its own construction before
returning: the per-head summation must match the concatenate-then-project
output, and the full pipeline must recover the planted mask with a margin.

Randomness comes from a counter-based splitmix64 stream so that identical
seeds give byte-identical bundles on any platform; the exact constants and
the stream-labeling scheme are documented in docs/bundle_format.md.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import (
    ActivationBundle,
    ClassEntry,
    CrossLayer,
    DenseFeature,
    SelfLayer,
    TokenEntry,
)
from .config import EngineConfig
from .errors import InvalidSpecError
from .maps import SegmentationMask, resize_nearest_labels
from .tensor import Tensor

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

# Planted logit scales: aligned query/key pairs score ALIGN_LOGIT after the
# 1/sqrt(d) softmax scaling, same-region pairs score BLOCK_LOGIT.
ALIGN_LOGIT = 6.0
BLOCK_LOGIT = 4.0

_STOP_WORDS = ("the", "a", "of", "on", "and", "in")


def splitmix64_values(seed: int, count: int) -> np.ndarray:
    """Uniform floats in [0, 1) from a counter-based splitmix64 stream.

    Value i finalizes seed + (i+1) * golden-ratio increment through the
    splitmix64 mixer and keeps the top 24 bits, so any implementation can
    reproduce the stream without sequential state.
    """
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK64) + idx * np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(40)).astype(np.float64) * 2.0**-24


def stream_seed(master: int, label: str) -> int:
    """Derive an independent sub-stream seed from a master seed and label.

    FNV-1a hashes the label, xors it into the master seed, and one
    splitmix64 round decorrelates neighboring masters.
    """
    h = _FNV_OFFSET
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    z = ((master & _MASK64) ^ h ^ _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _stream(master: int, label: str, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape))
    return splitmix64_values(stream_seed(master, label), count).reshape(shape)


def _noise(master: int, label: str, shape, amplitude: float) -> np.ndarray:
    return amplitude * (2.0 * _stream(master, label, shape) - 1.0)


@dataclass(frozen=True)
class FixtureSpec:
    """Everything that determines one synthetic bundle, bit for bit."""

    seed: int
    grid: tuple[int, int] = (8, 8)
    layers: int = 2
    heads: int = 2
    tokens: int = 4
    classes: int = 2
    noise_amplitude: float = 0.02
    head_dim: int = 16
    image_scale: int = 4
    background_classes: tuple[int, ...] = ()
    partition: str = "bands"

    def __post_init__(self):
        h, w = self.grid
        if h < 1 or w < 1:
            raise InvalidSpecError(f"grid must be positive, got {self.grid}")
        if self.layers < 1 or self.heads < 1:
            raise InvalidSpecError("layers and heads must be >= 1")
        if self.classes < 2:
            raise InvalidSpecError(
                "need >= 2 classes: a single class column is constant after "
                "per-pixel rescaling and renormalizes to zero"
            )
        if h < self.classes:
            raise InvalidSpecError(
                f"grid height {h} cannot hold {self.classes} row bands"
            )
        if self.tokens < self.classes + 1:
            raise InvalidSpecError(
                f"{self.tokens} tokens cannot cover a special token plus "
                f"{self.classes} content tokens"
            )
        if self.head_dim < self.classes:
            raise InvalidSpecError(
                f"head_dim {self.head_dim} smaller than {self.classes} class directions"
            )
        if self.noise_amplitude < 0:
            raise InvalidSpecError("noise_amplitude must be >= 0")
        if self.image_scale < 1:
            raise InvalidSpecError("image_scale must be >= 1")
        if self.partition != "bands":
            raise InvalidSpecError(f"unknown partition {self.partition!r}")
        bad = [c for c in self.background_classes if not 1 <= c <= self.classes]
        if bad:
            raise InvalidSpecError(f"background classes {bad} out of range")


def planted_labels(grid: tuple[int, int], classes: int) -> np.ndarray:
    """The planted partition: horizontal bands of near-equal height."""
    h, w = grid
    labels = np.zeros((h, w), dtype=np.int32)
    for c in range(1, classes + 1):
        lo = ((c - 1) * h) // classes
        hi = (c * h) // classes
        labels[lo:hi, :] = c
    return labels


def _layer_grid(spec: FixtureSpec, layer: int) -> tuple[int, int]:
    # Alternate layers run at half resolution when the bands still fit,
    # exercising the mixed-resolution paths.
    h, w = spec.grid
    if layer % 2 == 1 and h // 2 >= spec.classes and w // 2 >= 1:
        return h // 2, w // 2
    return h, w


def _token_entries(spec: FixtureSpec) -> tuple[TokenEntry, ...]:
    tokens = [TokenEntry(index=0, text="<sos>", category="special")]
    for c in range(1, spec.classes + 1):
        tokens.append(
            TokenEntry(index=c, text=f"object{c}", category="content", class_id=c)
        )
    for j in range(spec.classes + 1, spec.tokens):
        k = j - spec.classes - 1
        if k % 2 == 0:
            tokens.append(
                TokenEntry(
                    index=j,
                    text=_STOP_WORDS[(k // 2) % len(_STOP_WORDS)],
                    category="stop",
                )
            )
        else:
            c = (k // 2) % spec.classes + 1
            tokens.append(
                TokenEntry(
                    index=j, text=f"object{c}", category="content", class_id=c
                )
            )
    return tuple(tokens)


def _softmax_rows64(logits: np.ndarray, scale: float) -> np.ndarray:
    z = logits * scale
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def fixture_internals(spec: FixtureSpec) -> list[dict[str, np.ndarray]]:
    """Per-layer Q/K/V/W_o with both multi-head output forms, in float64.

    Exposes the raw ingredients behind each cross layer so tests can verify
    the summation-vs-concatenation identity independently of the bundle.
    """
    master = spec.seed & _MASK64
    amp = spec.noise_amplitude
    d = spec.head_dim
    n = spec.tokens
    scale_q = float(np.sqrt(ALIGN_LOGIT * np.sqrt(d)))
    content_class = {
        t.index: t.class_id for t in _token_entries(spec) if t.category == "content"
    }

    layers = []
    for m in range(spec.layers):
        grid = _layer_grid(spec, m)
        regions = planted_labels(grid, spec.classes).ravel()
        pixels = regions.size
        directions = np.zeros((pixels, d))
        directions[np.arange(pixels), regions - 1] = scale_q

        key_dirs = np.zeros((n, d))
        for j, c in content_class.items():
            key_dirs[j, c - 1] = scale_q

        qs, ks, vs, wos, attns, outs = [], [], [], [], [], []
        for head in range(spec.heads):
            tag = f"layer{m}/head{head}"
            q = directions + _noise(master, f"{tag}/q", (pixels, d), amp)
            k = key_dirs + _noise(master, f"{tag}/k", (n, d), amp)
            v = _stream(master, f"{tag}/v", (n, d)) - 0.5
            wo = _stream(master, f"{tag}/wo", (d, d)) - 0.5
            attn = _softmax_rows64(q @ k.T, 1.0 / np.sqrt(d))
            qs.append(q)
            ks.append(k)
            vs.append(v)
            wos.append(wo)
            attns.append(attn)
            outs.append(attn @ v @ wo)

        # Concatenate-then-project form against the per-head summation form.
        concat = np.hstack([a @ v for a, v in zip(attns, vs)]) @ np.vstack(wos)
        summed = np.sum(outs, axis=0)
        denom = max(float(np.abs(concat).max()), 1e-12)
        rel = float(np.abs(concat - summed).max()) / denom
        if rel > 1e-5:
            raise InvalidSpecError(
                f"layer {m}: summation form deviates from concat form by {rel:.3e}"
            )
        layers.append(
            {
                "grid": np.asarray(grid),
                "q": np.stack(qs),
                "k": np.stack(ks),
                "v": np.stack(vs),
                "w_o": np.stack(wos),
                "attn": np.stack(attns),
                "head_out": np.stack(outs),
                "concat_output": concat,
            }
        )
    return layers


def _build_bundle(spec: FixtureSpec) -> ActivationBundle:
    master = spec.seed & _MASK64
    amp = spec.noise_amplitude
    tokens = _token_entries(spec)
    classes = tuple(
        ClassEntry(
            class_id=c,
            name=f"object{c}",
            is_background=c in spec.background_classes,
        )
        for c in range(1, spec.classes + 1)
    )

    cross_layers = []
    self_layers = []
    for m, internals in enumerate(fixture_internals(spec)):
        grid_h, grid_w = (int(v) for v in internals["grid"])
        regions = planted_labels((grid_h, grid_w), spec.classes).ravel()
        cross_layers.append(
            CrossLayer(
                name=f"cross_{m}",
                heads=spec.heads,
                height=grid_h,
                width=grid_w,
                token_count=spec.tokens,
                head_dim=spec.head_dim,
                attn=Tensor(internals["attn"]),
                head_out=Tensor(internals["head_out"]),
            )
        )
        same = (regions[:, None] == regions[None, :]).astype(np.float64)
        logits = BLOCK_LOGIT * same + _noise(
            master, f"layer{m}/self", (regions.size, regions.size), amp
        )
        self_layers.append(
            SelfLayer(
                name=f"self_{m}",
                height=grid_h,
                width=grid_w,
                map=Tensor(_softmax_rows64(logits, 1.0)),
            )
        )

    h, w = spec.grid
    d_f = max(4, spec.classes)
    scale_f = float(np.sqrt(BLOCK_LOGIT * np.sqrt(d_f)))
    regions = planted_labels(spec.grid, spec.classes).ravel()
    feat = np.zeros((h * w, d_f))
    feat[np.arange(h * w), regions - 1] = scale_f
    feat += _noise(master, "feat", (h * w, d_f), amp)

    return ActivationBundle(
        model_id="synthetic/planted-bands",
        timestep=0,
        tokens=tokens,
        classes=classes,
        cross_layers=tuple(cross_layers),
        self_layers=tuple(self_layers),
        dense_feature=DenseFeature(
            height=h, width=w, channels=d_f, feat=Tensor(feat)
        ),
        image_size=(h * spec.image_scale, w * spec.image_scale),
    )


def planted_mask(spec: FixtureSpec) -> SegmentationMask:
    """Ground truth at image resolution; background-flagged regions become 0."""
    grid = planted_labels(spec.grid, spec.classes)
    if spec.background_classes:
        grid = np.where(np.isin(grid, spec.background_classes), 0, grid)
    h, w = spec.grid
    return SegmentationMask(
        labels=resize_nearest_labels(
            grid, (h * spec.image_scale, w * spec.image_scale)
        )
    )


def _recovery_margin(
    refined: np.ndarray,
    class_ids: tuple[int, ...],
    flags: dict[int, bool],
    gt_grid: np.ndarray,
    threshold: float,
) -> float:
    fg_cols = [i for i, c in enumerate(class_ids) if not flags[c]]
    bg_cols = [i for i, c in enumerate(class_ids) if flags[c]]
    col_of = {c: i for i, c in enumerate(class_ids)}

    pixels = refined.shape[0]
    bg = np.full(pixels, threshold)
    if bg_cols:
        bg = np.maximum(bg, refined[:, bg_cols].max(axis=1))

    margin = np.inf
    flat = gt_grid.ravel()
    for i in range(pixels):
        g = int(flat[i])
        if g > 0:
            win = refined[i, col_of[g]]
            rivals = [refined[i, c] for c in fg_cols if c != col_of[g]]
            rivals.append(bg[i])
            margin = min(margin, win - max(rivals))
        elif fg_cols:
            margin = min(margin, bg[i] - refined[i, fg_cols].max())
    return float(margin)


def generate_fixture(spec: FixtureSpec) -> tuple[ActivationBundle, SegmentationMask]:
    """Build a bundle plus its ground-truth mask, verifying the plant held.

    Runs the pipeline once on the freshly built bundle and raises
    InvalidSpecError unless the planted mask is recovered exactly with a
    winning margin above three times the noise amplitude.
    """
    from .correlation import run_pipeline  # deferred: correlation imports upward

    bundle = _build_bundle(spec)
    gt = planted_mask(spec)

    config = EngineConfig()
    result = run_pipeline(bundle, config)
    if result.mask != gt:
        mismatched = int((result.mask.labels != gt.labels).sum())
        raise InvalidSpecError(
            f"planted mask not recovered: {mismatched} of {gt.labels.size} "
            f"pixels differ (seed {spec.seed})"
        )

    refined = result.stages["refined"]
    gt_grid = planted_labels(spec.grid, spec.classes)
    if spec.background_classes:
        gt_grid = np.where(np.isin(gt_grid, spec.background_classes), 0, gt_grid)
    flags = {entry.class_id: entry.is_background for entry in bundle.classes}
    margin = _recovery_margin(
        refined.scores.array.astype(np.float64),
        refined.class_ids,
        flags,
        gt_grid,
        config.bg_threshold,
    )
    if not margin > 3.0 * spec.noise_amplitude:
        raise InvalidSpecError(
            f"winning margin {margin:.4f} does not clear 3x noise amplitude "
            f"{spec.noise_amplitude} (seed {spec.seed})"
        )
    return bundle, gt
