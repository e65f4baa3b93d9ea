"""Pipeline value types: staged global attention maps and segmentation masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidShapeError
from .tensor import Tensor

# Pipeline stage order. "raw" has one column per prompt token; from "merged"
# on there is one column per content class, ordered by ascending class_id.
STAGES = ("raw", "merged", "rescaled", "renormalized", "refined")


@dataclass(frozen=True)
class GlobalAttentionMap:
    """Pixels x columns score matrix at a working resolution.

    class_ids is None at stage "raw" and lists the class id behind each
    column from stage "merged" onward.
    """

    scores: Tensor
    stage: str
    resolution: tuple[int, int]
    class_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.scores.ndim != 2:
            raise InvalidShapeError(f"scores must be 2-D, got {self.scores.shape}")
        h, w = self.resolution
        if self.scores.shape[0] != h * w:
            raise InvalidShapeError(
                f"{self.scores.shape[0]} rows do not cover resolution {self.resolution}"
            )
        if self.stage == "raw":
            if self.class_ids is not None:
                raise ValueError("raw maps carry token columns, not class columns")
        elif self.class_ids is None or len(self.class_ids) != self.scores.shape[1]:
            raise ValueError("merged and later stages need one class id per column")


@dataclass(frozen=True)
class SegmentationMask:
    """Per-pixel class indices at image resolution; 0 is background."""

    labels: np.ndarray  # (height, width) integer array

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise InvalidShapeError(f"mask must be 2-D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("mask labels must be integers")
        if (arr < 0).any():
            raise ValueError("mask labels must be non-negative")
        arr = np.ascontiguousarray(arr.astype(np.int32))
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, SegmentationMask):
            return NotImplemented
        return self.shape == other.shape and bool(
            np.array_equal(self.labels, other.labels)
        )


def resize_nearest_labels(labels: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize for categorical label grids.

    Output index r maps to source index floor(r * H / H'); with an integer
    upscale factor this is exact block replication.
    """
    src_h, src_w = labels.shape
    dst_h, dst_w = int(target[0]), int(target[1])
    if dst_h < 1 or dst_w < 1:
        raise InvalidShapeError(f"target dims must be positive, got {target}")
    rows = (np.arange(dst_h) * src_h) // dst_h
    cols = (np.arange(dst_w) * src_w) // dst_w
    return labels[rows][:, cols]
