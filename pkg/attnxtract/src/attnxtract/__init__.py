"""Capture diffusion-model attention activations as bundle directories.

The package runs one noised forward pass of a conditioned UNet over an
image and its annotated prompt, records cross-attention maps (per head),
head outputs, head-averaged self-attention maps and one dense feature
map from profile-named layers, and serializes everything in the
segmentation engine's activation-bundle format.
"""

from .errors import (
    AttnxtractError,
    CaptureError,
    ImageError,
    PromptError,
    UnknownProfileError,
)
from .extract import extract, load_image
from .hooks import (
    CaptureSession,
    CaptureSet,
    CrossCapture,
    FeatureCapture,
    SelfCapture,
)
from .model import ModelSet, build_models
from .noising import alpha_bar, noise_latent
from .profiles import PROFILES, ExtractionProfile, get_profile
from .tokenizer import ClassAnnotation, PromptToken, split_words, tokenize
from .writer import write_bundle

__version__ = "0.1.0"

__all__ = [
    "AttnxtractError",
    "CaptureError",
    "CaptureSession",
    "CaptureSet",
    "ClassAnnotation",
    "CrossCapture",
    "ExtractionProfile",
    "FeatureCapture",
    "ImageError",
    "ModelSet",
    "PROFILES",
    "PromptError",
    "PromptToken",
    "SelfCapture",
    "UnknownProfileError",
    "alpha_bar",
    "build_models",
    "extract",
    "get_profile",
    "load_image",
    "noise_latent",
    "split_words",
    "tokenize",
    "write_bundle",
]
