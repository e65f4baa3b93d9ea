"""Engine configuration: metric choices, thresholds, and layer pairing.

Serialized as a single JSON file whose keys match the dataclass fields;
command-line flags override file values. "uniform" selects the reference
mode that averages heads/layers instead of deriving weights.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

HEAD_METRICS = ("dot", "l2", "cosine", "uniform")
LAYER_METRICS = ("dot", "mse", "iou", "uniform")
TARGET_POLICIES = ("max",)


@dataclass(frozen=True)
class EngineConfig:
    head_metric: str = "dot"
    layer_metric: str = "dot"
    refinement_steps: int = 1
    bg_threshold: float = 0.5
    # "max" picks the finest cross-layer resolution; an explicit (H, W) pins it.
    target_resolution: str | tuple[int, int] = "max"
    epsilon: float = 1e-8
    # Per cross layer, the index of the self layer whose weight it inherits.
    # None pairs by ordinal position and requires equal layer counts.
    layer_pairing: tuple[int, ...] | None = None
    # False skips per-pixel rescaling (reference mode used for comparison).
    rescale: bool = True

    def __post_init__(self):
        if self.head_metric not in HEAD_METRICS:
            raise ValueError(f"head_metric must be one of {HEAD_METRICS}")
        if self.layer_metric not in LAYER_METRICS:
            raise ValueError(f"layer_metric must be one of {LAYER_METRICS}")
        if self.refinement_steps < 0:
            raise ValueError("refinement_steps must be >= 0")
        if not 0.0 <= self.bg_threshold <= 1.0:
            raise ValueError("bg_threshold must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        tr = self.target_resolution
        if isinstance(tr, str):
            if tr not in TARGET_POLICIES:
                raise ValueError(f"target_resolution policy must be one of {TARGET_POLICIES}")
        else:
            if len(tr) != 2:
                raise ValueError(
                    "explicit target_resolution must be a (height, width) pair"
                )
            tr = (int(tr[0]), int(tr[1]))
            if tr[0] < 1 or tr[1] < 1:
                raise ValueError("explicit target_resolution dims must be positive")
            object.__setattr__(self, "target_resolution", tr)
        if self.layer_pairing is not None:
            pairing = tuple(int(i) for i in self.layer_pairing)
            if any(i < 0 for i in pairing):
                raise ValueError("layer_pairing indices must be non-negative")
            object.__setattr__(self, "layer_pairing", pairing)

    def to_json(self) -> str:
        doc = asdict(self)
        if isinstance(doc["target_resolution"], tuple):
            doc["target_resolution"] = list(doc["target_resolution"])
        if doc["layer_pairing"] is not None:
            doc["layer_pairing"] = list(doc["layer_pairing"])
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EngineConfig":
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise ValueError("config must be a JSON object")
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(doc.get("target_resolution"), list):
            doc["target_resolution"] = tuple(doc["target_resolution"])
        if isinstance(doc.get("layer_pairing"), list):
            doc["layer_pairing"] = tuple(doc["layer_pairing"])
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def replace(self, **changes) -> "EngineConfig":
        doc = asdict(self)
        doc.update(changes)
        return EngineConfig(**doc)
