"""Serialize a capture set as an activation bundle directory.

The on-disk format is the segmentation engine's documented bundle
contract: a ``manifest.json`` written with ``indent=2, sort_keys=True``
plus trailing newline, and headerless little-endian float32 row-major
tensor files. This module writes that format directly — it shares no
code with the consumer, so the bundle directory is the entire
interface.

Writes are atomic: everything lands in a hidden temp directory next to
the destination, which is renamed into place only when complete. A
crashed or failed extraction never leaves a half-written bundle.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .errors import CaptureError
from .hooks import CaptureSet
from .tokenizer import ClassAnnotation, PromptToken

MANIFEST_VERSION = 1
ROW_SUM_TOLERANCE = 1e-3


def _check_finite(array: np.ndarray, what: str) -> None:
    if not np.isfinite(array).all():
        raise CaptureError(f"{what}: captured values are not all finite")


def _check_stochastic(rows: np.ndarray, what: str) -> None:
    """Pre-write sanity check mirroring the consumer's load validation."""
    sums = rows.reshape(-1, rows.shape[-1]).astype(np.float64).sum(axis=1)
    worst = float(np.abs(sums - 1.0).max())
    if worst > ROW_SUM_TOLERANCE:
        raise CaptureError(
            f"{what}: attention rows deviate from sum 1 by {worst:.3e}"
        )


def _write_tensor(path: Path, array: np.ndarray) -> None:
    np.ascontiguousarray(array, dtype="<f4").tofile(path)


def _token_doc(token: PromptToken) -> dict:
    doc = {"index": token.index, "text": token.text, "category": token.category}
    if token.class_id is not None:
        doc["class_id"] = token.class_id
    return doc


def manifest_doc(
    *,
    model_id: str,
    timestep: int,
    image_height: int,
    image_width: int,
    tokens: list[PromptToken],
    classes: list[ClassAnnotation],
    captures: CaptureSet,
) -> dict:
    return {
        "manifest_version": MANIFEST_VERSION,
        "model_id": model_id,
        "timestep": timestep,
        "image_size": {"height": image_height, "width": image_width},
        "tokens": [_token_doc(t) for t in tokens],
        "classes": [
            {"class_id": c.class_id, "name": c.phrase, "is_background": c.is_background}
            for c in classes
        ],
        "cross_layers": [
            {
                "name": layer.name,
                "heads": layer.attn.shape[0],
                "height": layer.height,
                "width": layer.width,
                "token_count": layer.token_count,
                "head_dim": layer.head_dim,
                "attn_file": f"cross_{i}_attn.bin",
                "head_out_file": f"cross_{i}_out.bin",
            }
            for i, layer in enumerate(captures.cross)
        ],
        "self_layers": [
            {
                "name": layer.name,
                "height": layer.height,
                "width": layer.width,
                "map_file": f"self_{i}.bin",
            }
            for i, layer in enumerate(captures.selfs)
        ],
        "dense_feature": {
            "height": captures.feature.height,
            "width": captures.feature.width,
            "channels": captures.feature.channels,
            "file": "feat.bin",
        },
    }


def _validate_captures(tokens: list[PromptToken], captures: CaptureSet) -> None:
    for layer in captures.cross:
        pixels = layer.height * layer.width
        if layer.attn.shape != (layer.attn.shape[0], pixels, len(tokens)):
            raise CaptureError(
                f"{layer.name}: attention shape {layer.attn.shape} does not "
                f"match {pixels} pixels x {len(tokens)} prompt tokens"
            )
        if layer.head_out.shape != (layer.attn.shape[0], pixels, layer.head_dim):
            raise CaptureError(
                f"{layer.name}: head-output shape {layer.head_out.shape} does "
                f"not match ({layer.attn.shape[0]}, {pixels}, {layer.head_dim})"
            )
        _check_finite(layer.attn, f"{layer.name} attention")
        _check_finite(layer.head_out, f"{layer.name} head outputs")
        _check_stochastic(layer.attn, layer.name)
    for layer in captures.selfs:
        pixels = layer.height * layer.width
        if layer.attn_mean.shape != (pixels, pixels):
            raise CaptureError(
                f"{layer.name}: self map shape {layer.attn_mean.shape} is not "
                f"({pixels}, {pixels})"
            )
        _check_finite(layer.attn_mean, f"{layer.name} self map")
        _check_stochastic(layer.attn_mean, layer.name)
    feature = captures.feature
    if feature.values.shape != (feature.height * feature.width, feature.channels):
        raise CaptureError(
            f"dense feature: shape {feature.values.shape} is not "
            f"({feature.height * feature.width}, {feature.channels})"
        )
    _check_finite(feature.values, "dense feature")


def write_bundle(
    out_dir: str | Path,
    *,
    model_id: str,
    timestep: int,
    image_height: int,
    image_width: int,
    tokens: list[PromptToken],
    classes: list[ClassAnnotation],
    captures: CaptureSet,
) -> Path:
    """Write one bundle directory, atomically.

    Raises `CaptureError` when the captures are inconsistent with the
    prompt or fail the row-stochasticity check, `FileExistsError` when
    the destination already exists.
    """
    out = Path(out_dir)
    if out.exists():
        raise FileExistsError(f"output directory {out} already exists")
    _validate_captures(tokens, captures)

    doc = manifest_doc(
        model_id=model_id,
        timestep=timestep,
        image_height=image_height,
        image_width=image_width,
        tokens=tokens,
        classes=classes,
        captures=captures,
    )

    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.tmp-", dir=out.parent))
    try:
        for i, layer in enumerate(captures.cross):
            _write_tensor(tmp / f"cross_{i}_attn.bin", layer.attn)
            _write_tensor(tmp / f"cross_{i}_out.bin", layer.head_out)
        for i, layer in enumerate(captures.selfs):
            _write_tensor(tmp / f"self_{i}.bin", layer.attn_mean)
        _write_tensor(tmp / "feat.bin", captures.feature.values)
        (tmp / "manifest.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        os.replace(tmp, out)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)
    return out
