"""Overhead micro-benchmark: auto-derived weighting vs uniform averaging.

Both arms run the complete pipeline on one shared in-memory workload; they
differ only in what the auto path adds — per-pixel head scoring, the pseudo
self-attention with layer scoring, and per-pixel rescaling. The reported
ratio is therefore the end-to-end cost multiplier of the automatic
aggregation, mirroring a wall-clock comparison of full segmentation runs.
"""

from __future__ import annotations

import time

import numpy as np

from .bundle import (
    ActivationBundle,
    ClassEntry,
    CrossLayer,
    DenseFeature,
    SelfLayer,
    TokenEntry,
    validate_bundle,
)
from .config import EngineConfig
from .correlation import run_pipeline
from .errors import InvalidSpecError
from .tensor import Tensor

_STOPS = ("a", "the", "of", "on", "and", "by", "in", "at")


def build_bench_bundle(
    grid: tuple[int, int] = (64, 64),
    layers: int = 16,
    heads: int = 8,
    tokens: int = 77,
    head_dim: int = 40,
    classes: int = 4,
    self_layer_count: int = 4,
    seed: int = 0,
) -> tuple[ActivationBundle, EngineConfig, EngineConfig]:
    """One random workload plus the two arm configs that share it.

    Cross layers alternate between full and half resolution; a small set of
    half-resolution self layers is shared across cross layers through an
    explicit cyclic pairing, as a dump of selected backbone layers would be.
    """
    if classes + 1 > tokens:
        raise InvalidSpecError(f"{tokens} tokens cannot hold {classes} classes")
    h, w = grid
    if h < 2 or w < 2:
        raise InvalidSpecError(f"grid {grid} too small to benchmark")
    rng = np.random.default_rng(seed)

    token_entries = [TokenEntry(index=0, text="<sos>", category="special")]
    for c in range(1, classes + 1):
        token_entries.append(
            TokenEntry(index=c, text=f"object{c}", category="content", class_id=c)
        )
    for j in range(classes + 1, tokens):
        token_entries.append(
            TokenEntry(index=j, text=_STOPS[j % len(_STOPS)], category="stop")
        )
    class_entries = tuple(
        ClassEntry(class_id=c, name=f"object{c}") for c in range(1, classes + 1)
    )

    def stochastic(shape):
        raw = rng.random(shape, dtype=np.float32) + np.float32(1e-3)
        return raw / raw.sum(axis=-1, keepdims=True)

    half = (max(h // 2, 1), max(w // 2, 1))
    cross = []
    for m in range(layers):
        layer_grid = grid if m % 2 == 0 else half
        pixels = layer_grid[0] * layer_grid[1]
        cross.append(
            CrossLayer(
                name=f"cross_{m}",
                heads=heads,
                height=layer_grid[0],
                width=layer_grid[1],
                token_count=tokens,
                head_dim=head_dim,
                attn=Tensor(stochastic((heads, pixels, tokens))),
                head_out=Tensor(
                    rng.standard_normal((heads, pixels, head_dim), dtype=np.float32)
                ),
            )
        )

    self_pixels = half[0] * half[1]
    selfs = tuple(
        SelfLayer(
            name=f"self_{m}",
            height=half[0],
            width=half[1],
            map=Tensor(stochastic((self_pixels, self_pixels))),
        )
        for m in range(self_layer_count)
    )

    d_f = 32
    bundle = ActivationBundle(
        model_id="synthetic/bench",
        timestep=0,
        tokens=tuple(token_entries),
        classes=class_entries,
        cross_layers=tuple(cross),
        self_layers=selfs,
        dense_feature=DenseFeature(
            height=half[0],
            width=half[1],
            channels=d_f,
            feat=Tensor(rng.standard_normal((self_pixels, d_f), dtype=np.float32)),
        ),
        image_size=(h * 8, w * 8),
    )
    validate_bundle(bundle)

    pairing = tuple(m % self_layer_count for m in range(layers))
    uniform = EngineConfig(
        head_metric="uniform",
        layer_metric="uniform",
        rescale=False,
        layer_pairing=pairing,
    )
    auto = EngineConfig(layer_pairing=pairing)
    return bundle, uniform, auto


def run_bench(
    grid: tuple[int, int] = (64, 64),
    layers: int = 16,
    heads: int = 8,
    repeat: int = 1,
    tokens: int = 77,
    head_dim: int = 40,
) -> dict:
    """Median end-to-end seconds per arm on a shared workload, plus the ratio."""
    if repeat < 1:
        raise InvalidSpecError(f"repeat must be >= 1, got {repeat}")
    bundle, uniform_cfg, auto_cfg = build_bench_bundle(
        grid=grid, layers=layers, heads=heads, tokens=tokens, head_dim=head_dim
    )
    # One untimed warmup along the wider code path so allocator and cache
    # effects do not land in whichever arm happens to run first.
    run_pipeline(bundle, auto_cfg)

    uniform_runs: list[float] = []
    auto_runs: list[float] = []
    for _ in range(repeat):
        start = time.perf_counter()
        run_pipeline(bundle, uniform_cfg)
        uniform_runs.append(time.perf_counter() - start)

        start = time.perf_counter()
        run_pipeline(bundle, auto_cfg)
        auto_runs.append(time.perf_counter() - start)

    uniform_s = float(np.median(uniform_runs))
    auto_s = float(np.median(auto_runs))
    return {
        "grid": [grid[0], grid[1]],
        "layers": layers,
        "heads": heads,
        "tokens": tokens,
        "head_dim": head_dim,
        "repeat": repeat,
        "uniform_seconds": uniform_s,
        "auto_seconds": auto_s,
        "ratio": auto_s / uniform_s,
        "uniform_runs": uniform_runs,
        "auto_runs": auto_runs,
    }
