"""End-to-end extraction: image + annotated prompt -> activation bundle.

One call runs the whole capture pass: tokenize the prompt, encode the
image to a latent, noise it to the profile's timestep in closed form
(a single jump, no iterative sampling), run the conditioned UNet once
with capture hooks attached, and write the resulting maps as a bundle
directory the segmentation engine can load.

The bundle records the *source* image dimensions, so masks produced
from it align with the caller's image even when the model consumed a
resized copy.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import ImageError
from .hooks import CaptureSession
from .model import build_models
from .noising import noise_latent
from .profiles import ExtractionProfile, get_profile
from .tokenizer import ClassAnnotation, tokenize
from .writer import write_bundle


def load_image(
    image: str | Path | Image.Image, size: tuple[int, int]
) -> tuple[torch.Tensor, int, int]:
    """Open, record the original size, resize, map to [-1, 1].

    Returns ``(tensor, original_height, original_width)`` with the
    tensor shaped ``(1, 3, size_h, size_w)``.
    """
    if isinstance(image, Image.Image):
        pil = image
    else:
        path = Path(image)
        try:
            pil = Image.open(path)
            pil.load()
        except FileNotFoundError:
            raise ImageError(f"image file not found: {path}") from None
        except (UnidentifiedImageError, OSError) as exc:
            raise ImageError(f"cannot read image {path}: {exc}") from None
    original_w, original_h = pil.size
    pil = pil.convert("RGB")
    target_h, target_w = size
    if (original_h, original_w) != (target_h, target_w):
        pil = pil.resize((target_w, target_h), Image.Resampling.BILINEAR)
    array = np.asarray(pil, dtype=np.float32) / 127.5 - 1.0
    tensor = torch.from_numpy(array).permute(2, 0, 1)[None]
    return tensor, original_h, original_w


def extract(
    image: str | Path | Image.Image,
    prompt: str,
    annotations: list[ClassAnnotation],
    profile: ExtractionProfile | str,
    out_dir: str | Path,
    *,
    seed: int = 0,
) -> Path:
    """Capture one bundle for ``(image, prompt, timestep)``.

    ``annotations`` mark which prompt words belong to which class; the
    caller supplies them, nothing is detected automatically. ``seed``
    fixes both the model weights and the closed-form noise draw, so a
    repeated call writes a byte-identical bundle.
    """
    if isinstance(profile, str):
        profile = get_profile(profile)

    tokens = tokenize(
        prompt,
        annotations,
        special_token_rule=profile.special_token_rule,
        pad_to_length=profile.pad_to_length,
    )
    pixels, source_h, source_w = load_image(image, profile.image_size)

    models = build_models(seed)
    with torch.no_grad():
        latent = models.image_encoder(pixels)
        generator = torch.Generator().manual_seed(seed)
        noisy = noise_latent(latent, profile.timestep, generator)
        text = models.text_encoder([token.text for token in tokens])
        latent_h, latent_w = int(latent.shape[-2]), int(latent.shape[-1])
        with CaptureSession(models.unet, profile, latent_h, latent_w) as session:
            models.unet(noisy, profile.timestep, text)
            captures = session.result()

    return write_bundle(
        out_dir,
        model_id=profile.model_family,
        timestep=profile.timestep,
        image_height=source_h,
        image_width=source_w,
        tokens=tokens,
        classes=annotations,
        captures=captures,
    )
