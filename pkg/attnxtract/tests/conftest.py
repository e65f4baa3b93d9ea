"""Shared fixtures: deterministic test images and one cached extraction.

Extraction runs a full model forward, so the suite shares one
session-scoped bundle and one session-scoped capture set instead of
re-extracting per test. Nothing here imports the consuming segmentation
package; round-trip tests talk to it through its command line only.

This conftest sits on a pytest testpath, so it is imported even when the
extractor package is absent (each test module skips itself in that
case). Extractor imports therefore live inside the fixture bodies, never
at module level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import pytest
import torch
from PIL import Image

if TYPE_CHECKING:
    from attnxtract import CaptureSet, ClassAnnotation, ModelSet
    from attnxtract.profiles import ExtractionProfile

SMALL_PROMPT = "a striped cat sits by a red mat with another cat"


def small_annotations() -> list["ClassAnnotation"]:
    from attnxtract import ClassAnnotation

    return [ClassAnnotation("cat", 1), ClassAnnotation("red mat", 2)]


def make_image(height: int, width: int, seed: int = 7) -> Image.Image:
    """Deterministic RGB test image: colour wedges plus mild noise."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:height, 0:width]
    base = np.stack(
        [
            (x * 255) // max(width - 1, 1),
            (y * 255) // max(height - 1, 1),
            ((x + y) * 255) // max(height + width - 2, 1),
        ],
        axis=-1,
    ).astype(np.int16)
    noise = rng.integers(-12, 13, size=base.shape, dtype=np.int16)
    return Image.fromarray(np.clip(base + noise, 0, 255).astype(np.uint8))


def read_pgm(path) -> np.ndarray:
    """Minimal binary-PGM reader so tests never import the consumer."""
    data = open(path, "rb").read()
    magic, dims, maxval, body = data.split(b"\n", 3)
    assert magic == b"P5" and maxval == b"255"
    width, height = (int(v) for v in dims.split())
    assert len(body) == height * width
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)


@pytest.fixture(scope="session")
def image_factory():
    return make_image


@pytest.fixture(scope="session")
def pgm_reader():
    return read_pgm


@pytest.fixture(scope="session")
def small_inputs() -> tuple[str, list["ClassAnnotation"]]:
    return SMALL_PROMPT, small_annotations()


@pytest.fixture(scope="session")
def small_bundle(tmp_path_factory):
    from attnxtract import extract

    out = tmp_path_factory.mktemp("bundles") / "small"
    return extract(
        make_image(128, 128),
        SMALL_PROMPT,
        small_annotations(),
        "sd15-small",
        out,
        seed=11,
    )


@pytest.fixture(scope="session")
def small_manifest(small_bundle) -> dict:
    return json.loads((small_bundle / "manifest.json").read_text())


@dataclass(frozen=True)
class CaptureRun:
    """One hooked forward pass plus everything needed to re-run it."""

    profile: "ExtractionProfile"
    models: "ModelSet"
    captures: "CaptureSet"
    latent_h: int
    latent_w: int
    noisy: torch.Tensor
    text: torch.Tensor

    def forward(self) -> None:
        """Repeat the exact captured forward pass (deterministic)."""
        with torch.no_grad():
            self.models.unet(self.noisy, self.profile.timestep, self.text)


@pytest.fixture(scope="session")
def capture_run() -> CaptureRun:
    from attnxtract import CaptureSession, build_models, get_profile
    from attnxtract.noising import noise_latent

    profile = get_profile("sd15-small")
    models = build_models(seed=5)
    image = torch.from_numpy(
        np.asarray(make_image(128, 128, seed=3), dtype=np.float32) / 127.5 - 1.0
    ).permute(2, 0, 1)[None]
    with torch.no_grad():
        latent = models.image_encoder(image)
        noisy = noise_latent(
            latent, profile.timestep, torch.Generator().manual_seed(2)
        )
        text = models.text_encoder(["<sos>", "black", "cat", "<eos>"])
        latent_h, latent_w = int(latent.shape[-2]), int(latent.shape[-1])
        with CaptureSession(models.unet, profile, latent_h, latent_w) as session:
            models.unet(noisy, profile.timestep, text)
            captures = session.result()
    return CaptureRun(
        profile=profile,
        models=models,
        captures=captures,
        latent_h=latent_h,
        latent_w=latent_w,
        noisy=noisy,
        text=text,
    )
