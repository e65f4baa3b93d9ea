"""Shared builders for randomized test bundles."""

from __future__ import annotations

import numpy as np

from attnseg import (
    ActivationBundle,
    ClassEntry,
    CrossLayer,
    DenseFeature,
    SelfLayer,
    Tensor,
    TokenEntry,
    validate_bundle,
)

STOPS = ("the", "a", "of", "on")


def stochastic_rows(rng: np.random.Generator, shape) -> np.ndarray:
    """Random strictly positive rows normalized to sum 1, in float64."""
    raw = rng.random(shape) + 1e-3
    return raw / raw.sum(axis=-1, keepdims=True)


def make_tokens(classes: int, extra_stops: int = 1, duplicates: int = 0):
    """Token table: one special, one content token per class, then extras."""
    tokens = [TokenEntry(index=0, text="<sos>", category="special")]
    for c in range(1, classes + 1):
        tokens.append(
            TokenEntry(index=c, text=f"thing{c}", category="content", class_id=c)
        )
    idx = classes + 1
    for j in range(duplicates):
        c = j % classes + 1
        tokens.append(
            TokenEntry(index=idx, text=f"thing{c}", category="content", class_id=c)
        )
        idx += 1
    for j in range(extra_stops):
        tokens.append(
            TokenEntry(index=idx, text=STOPS[j % len(STOPS)], category="stop")
        )
        idx += 1
    return tuple(tokens)


def make_bundle(
    seed: int,
    grid: tuple[int, int] | None = None,
    layers: int | None = None,
    heads: int | None = None,
    classes: int | None = None,
    head_dim: int = 6,
    background: tuple[int, ...] = (),
    cancel_heads_in_layer: int | None = None,
) -> ActivationBundle:
    """A fully random but valid bundle; all free parameters drawn from seed.

    cancel_heads_in_layer builds that cross layer with exactly cancelling
    head outputs (their sum is zero), the adversarial case where every
    similarity clamps to zero and head weighting must fall back to uniform.
    """
    rng = np.random.default_rng(seed)
    if grid is None:
        grid = (int(rng.integers(4, 9)), int(rng.integers(4, 9)))
    if layers is None:
        layers = int(rng.integers(1, 4))
    if heads is None:
        heads = int(rng.integers(1, 5))
    if classes is None:
        classes = int(rng.integers(1, 4))
    h, w = grid

    tokens = make_tokens(
        classes,
        extra_stops=int(rng.integers(1, 3)),
        duplicates=int(rng.integers(0, 2)),
    )
    class_entries = tuple(
        ClassEntry(class_id=c, name=f"thing{c}", is_background=c in background)
        for c in range(1, classes + 1)
    )

    cross = []
    selfs = []
    for m in range(layers):
        # Alternate full and half resolution to exercise the resize paths.
        if m % 2 == 1 and h >= 4 and w >= 4:
            lh, lw = h // 2, w // 2
        else:
            lh, lw = h, w
        pixels = lh * lw
        if m == cancel_heads_in_layer and heads >= 2:
            half = rng.standard_normal((heads // 2, pixels, head_dim))
            out = np.concatenate([half, -half], axis=0)
            if heads % 2 == 1:
                out = np.concatenate([out, np.zeros((1, pixels, head_dim))], axis=0)
        else:
            out = rng.standard_normal((heads, pixels, head_dim))
        cross.append(
            CrossLayer(
                name=f"cross_{m}",
                heads=heads,
                height=lh,
                width=lw,
                token_count=len(tokens),
                head_dim=head_dim,
                attn=Tensor(stochastic_rows(rng, (heads, pixels, len(tokens)))),
                head_out=Tensor(out),
            )
        )
        selfs.append(
            SelfLayer(
                name=f"self_{m}",
                height=lh,
                width=lw,
                map=Tensor(stochastic_rows(rng, (pixels, pixels))),
            )
        )

    d_f = int(rng.integers(3, 7))
    bundle = ActivationBundle(
        model_id=f"synthetic/random-{seed}",
        timestep=0,
        tokens=tokens,
        classes=class_entries,
        cross_layers=tuple(cross),
        self_layers=tuple(selfs),
        dense_feature=DenseFeature(
            height=h,
            width=w,
            channels=d_f,
            feat=Tensor(rng.standard_normal((h * w, d_f))),
        ),
        image_size=(h * 2, w * 2),
    )
    validate_bundle(bundle)
    return bundle
