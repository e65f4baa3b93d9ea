"""Read/write/validate the on-disk activation-bundle format.

A bundle is one directory per image: manifest.json plus headerless tensor
files of little-endian float32, row-major. Shapes live only in the manifest.
Masks are written as binary PGM (P5) with a JSON sidecar mapping class
indices to names. See docs/bundle_format.md for the exact schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ManifestSchemaError,
    MissingFileError,
    NonStochasticRowsError,
    ShapeMismatchError,
    UnknownClassIdError,
    UnsupportedError,
)
from .maps import SegmentationMask
from .tensor import Tensor

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
ROW_SUM_TOL = 1e-3

TOKEN_CATEGORIES = ("special", "content", "stop")


@dataclass(frozen=True)
class TokenEntry:
    index: int
    text: str
    category: str
    class_id: int | None = None

    def __post_init__(self):
        if self.category not in TOKEN_CATEGORIES:
            raise ManifestSchemaError(
                f"token {self.index} ({self.text!r}): bad category {self.category!r}"
            )
        if (self.category == "content") != (self.class_id is not None):
            raise ManifestSchemaError(
                f"token {self.index} ({self.text!r}): class_id present iff content"
            )


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    name: str
    is_background: bool = False

    def __post_init__(self):
        if self.class_id < 1:
            raise ManifestSchemaError(
                f"class {self.name!r}: class_id must be positive (0 is implicit background)"
            )


@dataclass(frozen=True)
class CrossLayer:
    name: str
    heads: int
    height: int
    width: int
    token_count: int
    head_dim: int
    attn: Tensor      # (heads, H*W, token_count), rows stochastic per head/pixel
    head_out: Tensor  # (heads, H*W, head_dim)


@dataclass(frozen=True)
class SelfLayer:
    name: str
    height: int
    width: int
    map: Tensor  # (H*W, H*W), head-averaged, row-stochastic


@dataclass(frozen=True)
class DenseFeature:
    height: int
    width: int
    channels: int
    feat: Tensor  # (H*W, channels)


@dataclass(frozen=True)
class ActivationBundle:
    model_id: str
    timestep: int
    tokens: tuple[TokenEntry, ...]
    classes: tuple[ClassEntry, ...]
    cross_layers: tuple[CrossLayer, ...]
    self_layers: tuple[SelfLayer, ...]
    dense_feature: DenseFeature
    image_size: tuple[int, int]  # (height, width)
    manifest_version: int = MANIFEST_VERSION

    def class_by_id(self, class_id: int) -> ClassEntry:
        for entry in self.classes:
            if entry.class_id == class_id:
                return entry
        raise UnknownClassIdError(f"class_id {class_id} not declared")


def _rows_stochastic(arr: np.ndarray, what: str) -> None:
    sums = arr.astype(np.float64).sum(axis=-1)
    bad = np.abs(sums - 1.0) > ROW_SUM_TOL
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NonStochasticRowsError(
            f"{what}: row {idx} sums to {sums[idx]:.6f}, expected 1 +- {ROW_SUM_TOL}"
        )


def validate_bundle(b: ActivationBundle) -> None:
    """Enforce every bundle invariant; raises naming the offending entry."""
    if b.manifest_version != MANIFEST_VERSION:
        raise ManifestSchemaError(
            f"manifest_version {b.manifest_version} unsupported (expected {MANIFEST_VERSION})"
        )
    if not b.cross_layers:
        raise ManifestSchemaError("bundle needs at least one cross layer")
    if not b.self_layers:
        raise ManifestSchemaError("bundle needs at least one self layer")
    if b.image_size[0] < 1 or b.image_size[1] < 1:
        raise ManifestSchemaError(f"bad image_size {b.image_size}")

    ids = [c.class_id for c in b.classes]
    if len(set(ids)) != len(ids):
        raise ManifestSchemaError(f"duplicate class_id in {ids}")
    declared = set(ids)
    for tok in b.tokens:
        if tok.category == "content" and tok.class_id not in declared:
            raise UnknownClassIdError(
                f"token {tok.index} ({tok.text!r}) references unknown class_id {tok.class_id}"
            )
    for pos, tok in enumerate(b.tokens):
        if tok.index != pos:
            raise ManifestSchemaError(
                f"token at position {pos} carries index {tok.index}"
            )

    n_tokens = len(b.tokens)
    for layer in b.cross_layers:
        pixels = layer.height * layer.width
        if layer.token_count != n_tokens:
            raise ManifestSchemaError(
                f"cross layer {layer.name!r}: token_count {layer.token_count} "
                f"!= {n_tokens} manifest tokens"
            )
        if layer.attn.shape != (layer.heads, pixels, layer.token_count):
            raise ShapeMismatchError(
                f"cross layer {layer.name!r}: attn shape {layer.attn.shape} != "
                f"{(layer.heads, pixels, layer.token_count)}"
            )
        if layer.head_out.shape != (layer.heads, pixels, layer.head_dim):
            raise ShapeMismatchError(
                f"cross layer {layer.name!r}: head_out shape {layer.head_out.shape} != "
                f"{(layer.heads, pixels, layer.head_dim)}"
            )
        _rows_stochastic(layer.attn.array, f"cross layer {layer.name!r} attn")

    for layer in b.self_layers:
        pixels = layer.height * layer.width
        if layer.map.shape != (pixels, pixels):
            raise ShapeMismatchError(
                f"self layer {layer.name!r}: map shape {layer.map.shape} != {(pixels, pixels)}"
            )
        _rows_stochastic(layer.map.array, f"self layer {layer.name!r} map")

    feat = b.dense_feature
    pixels = feat.height * feat.width
    if feat.feat.shape != (pixels, feat.channels):
        raise ShapeMismatchError(
            f"dense feature: shape {feat.feat.shape} != {(pixels, feat.channels)}"
        )


# --- manifest (de)serialization ---------------------------------------------

def _manifest_doc(b: ActivationBundle) -> dict:
    tokens = []
    for tok in b.tokens:
        doc = {"index": tok.index, "text": tok.text, "category": tok.category}
        if tok.class_id is not None:
            doc["class_id"] = tok.class_id
        tokens.append(doc)
    return {
        "manifest_version": b.manifest_version,
        "model_id": b.model_id,
        "timestep": b.timestep,
        "image_size": {"height": b.image_size[0], "width": b.image_size[1]},
        "tokens": tokens,
        "classes": [
            {"class_id": c.class_id, "name": c.name, "is_background": c.is_background}
            for c in b.classes
        ],
        "cross_layers": [
            {
                "name": layer.name,
                "heads": layer.heads,
                "height": layer.height,
                "width": layer.width,
                "token_count": layer.token_count,
                "head_dim": layer.head_dim,
                "attn_file": f"cross_{i}_attn.bin",
                "head_out_file": f"cross_{i}_out.bin",
            }
            for i, layer in enumerate(b.cross_layers)
        ],
        "self_layers": [
            {
                "name": layer.name,
                "height": layer.height,
                "width": layer.width,
                "map_file": f"self_{i}.bin",
            }
            for i, layer in enumerate(b.self_layers)
        ],
        "dense_feature": {
            "height": b.dense_feature.height,
            "width": b.dense_feature.width,
            "channels": b.dense_feature.channels,
            "file": "feat.bin",
        },
    }


def _need(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise ManifestSchemaError(f"{where}: missing key {key!r}")
    value = doc[key]
    if kind is int and isinstance(value, bool):
        raise ManifestSchemaError(f"{where}: key {key!r} must be {kind.__name__}")
    if not isinstance(value, kind):
        raise ManifestSchemaError(f"{where}: key {key!r} must be {kind.__name__}")
    return value


def _tensor_file(root: Path, name: str, shape, what: str) -> Tensor:
    if not isinstance(name, str) or "/" in name or "\\" in name or name.startswith("."):
        raise ManifestSchemaError(f"{what}: bad tensor file name {name!r}")
    path = root / name
    if not path.is_file():
        raise MissingFileError(f"{what}: tensor file {name!r} not found in {root}")
    raw = path.read_bytes()
    expected = 4 * int(np.prod(shape))
    if len(raw) != expected:
        raise ShapeMismatchError(
            f"{what}: file {name!r} holds {len(raw)} bytes, shape {tuple(shape)} needs {expected}"
        )
    return Tensor.frombytes(raw, shape)


def load_bundle(path: str | Path) -> ActivationBundle:
    """Load and fully validate a bundle directory."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingFileError(f"{MANIFEST_NAME} not found in {root}")
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestSchemaError(f"{MANIFEST_NAME}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ManifestSchemaError(f"{MANIFEST_NAME}: top level must be an object")

    version = _need(doc, "manifest_version", int, MANIFEST_NAME)
    if version != MANIFEST_VERSION:
        raise ManifestSchemaError(
            f"manifest_version {version} unsupported (expected {MANIFEST_VERSION})"
        )
    model_id = _need(doc, "model_id", str, MANIFEST_NAME)
    timestep = _need(doc, "timestep", int, MANIFEST_NAME)
    size_doc = _need(doc, "image_size", dict, MANIFEST_NAME)
    image_size = (
        _need(size_doc, "height", int, "image_size"),
        _need(size_doc, "width", int, "image_size"),
    )

    tokens = []
    for i, tok in enumerate(_need(doc, "tokens", list, MANIFEST_NAME)):
        where = f"tokens[{i}]"
        if not isinstance(tok, dict):
            raise ManifestSchemaError(f"{where}: must be an object")
        class_id = tok.get("class_id")
        if class_id is not None and (
            isinstance(class_id, bool) or not isinstance(class_id, int)
        ):
            raise ManifestSchemaError(f"{where}: class_id must be an integer")
        tokens.append(
            TokenEntry(
                index=_need(tok, "index", int, where),
                text=_need(tok, "text", str, where),
                category=_need(tok, "category", str, where),
                class_id=class_id,
            )
        )

    classes = []
    for i, cls in enumerate(_need(doc, "classes", list, MANIFEST_NAME)):
        where = f"classes[{i}]"
        if not isinstance(cls, dict):
            raise ManifestSchemaError(f"{where}: must be an object")
        classes.append(
            ClassEntry(
                class_id=_need(cls, "class_id", int, where),
                name=_need(cls, "name", str, where),
                is_background=_need(cls, "is_background", bool, where),
            )
        )

    cross_layers = []
    for i, layer in enumerate(_need(doc, "cross_layers", list, MANIFEST_NAME)):
        where = f"cross_layers[{i}]"
        if not isinstance(layer, dict):
            raise ManifestSchemaError(f"{where}: must be an object")
        heads = _need(layer, "heads", int, where)
        height = _need(layer, "height", int, where)
        width = _need(layer, "width", int, where)
        token_count = _need(layer, "token_count", int, where)
        head_dim = _need(layer, "head_dim", int, where)
        if min(heads, height, width, token_count, head_dim) < 1:
            raise ManifestSchemaError(f"{where}: dimensions must be positive")
        pixels = height * width
        cross_layers.append(
            CrossLayer(
                name=_need(layer, "name", str, where),
                heads=heads,
                height=height,
                width=width,
                token_count=token_count,
                head_dim=head_dim,
                attn=_tensor_file(
                    root, _need(layer, "attn_file", str, where),
                    (heads, pixels, token_count), where,
                ),
                head_out=_tensor_file(
                    root, _need(layer, "head_out_file", str, where),
                    (heads, pixels, head_dim), where,
                ),
            )
        )

    self_layers = []
    for i, layer in enumerate(_need(doc, "self_layers", list, MANIFEST_NAME)):
        where = f"self_layers[{i}]"
        if not isinstance(layer, dict):
            raise ManifestSchemaError(f"{where}: must be an object")
        height = _need(layer, "height", int, where)
        width = _need(layer, "width", int, where)
        if min(height, width) < 1:
            raise ManifestSchemaError(f"{where}: dimensions must be positive")
        pixels = height * width
        self_layers.append(
            SelfLayer(
                name=_need(layer, "name", str, where),
                height=height,
                width=width,
                map=_tensor_file(
                    root, _need(layer, "map_file", str, where), (pixels, pixels), where
                ),
            )
        )

    feat_doc = _need(doc, "dense_feature", dict, MANIFEST_NAME)
    height = _need(feat_doc, "height", int, "dense_feature")
    width = _need(feat_doc, "width", int, "dense_feature")
    channels = _need(feat_doc, "channels", int, "dense_feature")
    if min(height, width, channels) < 1:
        raise ManifestSchemaError("dense_feature: dimensions must be positive")
    dense = DenseFeature(
        height=height,
        width=width,
        channels=channels,
        feat=_tensor_file(
            root, _need(feat_doc, "file", str, "dense_feature"),
            (height * width, channels), "dense_feature",
        ),
    )

    bundle = ActivationBundle(
        model_id=model_id,
        timestep=timestep,
        tokens=tuple(tokens),
        classes=tuple(classes),
        cross_layers=tuple(cross_layers),
        self_layers=tuple(self_layers),
        dense_feature=dense,
        image_size=image_size,
        manifest_version=version,
    )
    validate_bundle(bundle)
    return bundle


def write_bundle(b: ActivationBundle, path: str | Path) -> None:
    """Write a validated bundle; round-trips bit-exactly through load_bundle."""
    validate_bundle(b)
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    doc = _manifest_doc(b)
    for i, layer in enumerate(b.cross_layers):
        (root / f"cross_{i}_attn.bin").write_bytes(layer.attn.tobytes())
        (root / f"cross_{i}_out.bin").write_bytes(layer.head_out.tobytes())
    for i, layer in enumerate(b.self_layers):
        (root / f"self_{i}.bin").write_bytes(layer.map.tobytes())
    (root / "feat.bin").write_bytes(b.dense_feature.feat.tobytes())
    (root / MANIFEST_NAME).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# --- masks -------------------------------------------------------------------

def write_mask(
    mask: SegmentationMask,
    path: str | Path,
    classes: tuple[ClassEntry, ...] = (),
) -> None:
    """Write an 8-bit binary PGM (P5) mask plus a JSON sidecar of class names.

    Pixel value is the class index; the sidecar maps every declared class
    (and background 0) to its name.
    """
    labels = mask.labels
    if labels.max(initial=0) > 255:
        raise UnsupportedError(
            f"class index {int(labels.max())} does not fit 8-bit PGM"
        )
    h, w = labels.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(labels.astype(np.uint8).tobytes())

    names = {"0": "background"}
    for entry in classes:
        names[str(entry.class_id)] = entry.name
    used = {str(int(v)) for v in np.unique(labels)}
    missing = used - set(names)
    for idx in sorted(missing, key=int):
        names[idx] = f"class_{idx}"
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(names, indent=2, sort_keys=True) + "\n", "utf-8")


def read_mask(path: str | Path) -> SegmentationMask:
    """Read a binary PGM (P5) mask written by write_mask."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ManifestSchemaError(f"{path}: not a binary PGM (P5) file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":  # comment line
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ManifestSchemaError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise UnsupportedError(f"{path}: maxval {maxval} unsupported")
    body = raw[pos : pos + h * w]
    if len(body) != h * w:
        raise ShapeMismatchError(
            f"{path}: payload holds {len(body)} bytes, header needs {h * w}"
        )
    labels = np.frombuffer(body, dtype=np.uint8).reshape(h, w)
    return SegmentationMask(labels=labels.astype(np.int32))
