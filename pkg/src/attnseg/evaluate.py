"""Intersection-over-union evaluation for segmentation masks.

IoU counts are aggregated over the whole image list before the per-class
ratio is taken (dataset-level accumulation, the common benchmark
convention). The mean runs over declared classes that appear in at least
one ground-truth or predicted mask; the implicit background label 0 never
enters the mean.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidScoresError, ManifestSchemaError, ShapeMismatchError
from .maps import SegmentationMask


@dataclass(frozen=True)
class EvalReport:
    """Per-class IoU, their mean, and the raw confusion counts."""

    per_class_iou: dict[int, float]
    miou: float
    confusion: dict[tuple[int, int], int] = field(repr=False)
    images_evaluated: int

    def to_json(self) -> str:
        table: dict[str, dict[str, int]] = {}
        for (gt, pred), count in sorted(self.confusion.items()):
            table.setdefault(str(gt), {})[str(pred)] = count
        doc = {
            "miou": self.miou,
            "per_class_iou": {str(c): v for c, v in sorted(self.per_class_iou.items())},
            "images_evaluated": self.images_evaluated,
            "confusion": table,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def compute_iou(pred: SegmentationMask, gt: SegmentationMask, class_id: int) -> float:
    """Intersection over union of one class between two equally sized masks."""
    if pred.shape != gt.shape:
        raise ShapeMismatchError(
            f"prediction {pred.shape} vs ground truth {gt.shape}"
        )
    p = pred.labels == class_id
    g = gt.labels == class_id
    union = int(np.logical_or(p, g).sum())
    if union == 0:
        raise InvalidScoresError(
            f"class {class_id} absent from both masks; IoU undefined"
        )
    return float(np.logical_and(p, g).sum() / union)


def compute_miou(
    pairs: Sequence[tuple[SegmentationMask, SegmentationMask]],
    classes: Sequence[int],
) -> EvalReport:
    """Dataset-aggregated mIoU over (prediction, ground-truth) mask pairs.

    `classes` lists the declared positive class ids. A class missing from
    every mask is excluded from the mean; the implicit background 0 is
    counted in the confusion table but never averaged.
    """
    if not pairs:
        raise InvalidScoresError("compute_miou needs at least one mask pair")
    ids = [int(c) for c in classes]
    if any(c < 1 for c in ids):
        raise InvalidScoresError(
            f"declared class ids must be positive, got {sorted(ids)}"
        )
    if len(set(ids)) != len(ids):
        raise InvalidScoresError(f"duplicate declared class ids in {sorted(ids)}")

    confusion: dict[tuple[int, int], int] = {}
    for pred, gt in pairs:
        if pred.shape != gt.shape:
            raise ShapeMismatchError(
                f"prediction {pred.shape} vs ground truth {gt.shape}"
            )
        stacked = np.stack([gt.labels.ravel(), pred.labels.ravel()])
        cells, counts = np.unique(stacked, axis=1, return_counts=True)
        for (g, p), count in zip(cells.T, counts):
            key = (int(g), int(p))
            confusion[key] = confusion.get(key, 0) + int(count)

    per_class: dict[int, float] = {}
    for c in sorted(set(ids)):
        inter = confusion.get((c, c), 0)
        in_gt = sum(n for (g, _), n in confusion.items() if g == c)
        in_pred = sum(n for (_, p), n in confusion.items() if p == c)
        union = in_gt + in_pred - inter
        if union == 0:
            continue  # absent everywhere: excluded from the mean
        per_class[c] = inter / union

    miou = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return EvalReport(
        per_class_iou=per_class,
        miou=miou,
        confusion=confusion,
        images_evaluated=len(pairs),
    )


def load_class_ids(path) -> list[int]:
    """Read declared class ids from a JSON file.

    Accepts either a plain list of ids, a list of {"class_id": ...}
    objects, or an object with a "classes" key holding either form.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestSchemaError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(doc, dict):
        doc = doc.get("classes")
    if not isinstance(doc, list) or not doc:
        raise ManifestSchemaError(f"{path}: expected a non-empty class list")
    ids = []
    for entry in doc:
        if isinstance(entry, bool):
            raise ManifestSchemaError(f"{path}: bad class entry {entry!r}")
        if isinstance(entry, int):
            ids.append(entry)
        elif (
            isinstance(entry, dict)
            and isinstance(entry.get("class_id"), int)
            and not isinstance(entry.get("class_id"), bool)
        ):
            ids.append(entry["class_id"])
        else:
            raise ManifestSchemaError(f"{path}: bad class entry {entry!r}")
    return ids
