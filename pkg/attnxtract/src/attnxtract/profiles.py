"""Per-model extraction profiles.

A profile pins everything that varies between diffusion model families:
which timestep to noise to, which attention modules to capture, where
the dense feature for layer weighting comes from, how prompt tokens are
padded, and which tokens count as semantic special tokens.

Cross- and self-attention layer lists are kept the same length with a
shared block order, so the segmentation engine's positional
cross-to-self pairing applies without an explicit pairing table.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UnknownProfileError

SPECIAL_TOKEN_RULES = ("sos", "sos_eos")


def _transformer_paths(kind: str) -> tuple[str, ...]:
    """Attention module paths for the UNet blocks worth capturing.

    `kind` is "attn2" (cross) or "attn1" (self). The selected blocks are
    every attention-bearing block from the 32x32 encoder level down
    through the bottleneck and back up: the coarse levels carry the
    semantic signal, while the finest (64x64) level is noisy and
    quadratically larger, so it is left out.
    """
    suffix = f"transformer_blocks.0.{kind}"
    paths = []
    for block, count in (("down_blocks.1", 2), ("down_blocks.2", 2)):
        paths += [f"{block}.attentions.{i}.{suffix}" for i in range(count)]
    paths.append(f"mid_block.attentions.0.{suffix}")
    for block, count in (("up_blocks.1", 3), ("up_blocks.2", 3)):
        paths += [f"{block}.attentions.{i}.{suffix}" for i in range(count)]
    return tuple(paths)


@dataclass(frozen=True)
class ExtractionProfile:
    """Everything model-specific about one extraction configuration."""

    name: str
    model_family: str
    timestep: int
    image_size: tuple[int, int]
    pad_to_length: int
    special_token_rule: str
    dense_feature_layer: str
    cross_attention_layers: tuple[str, ...]
    self_attention_layers: tuple[str, ...]

    def __post_init__(self):
        if self.special_token_rule not in SPECIAL_TOKEN_RULES:
            raise UnknownProfileError(
                f"profile {self.name!r}: special_token_rule must be one of "
                f"{SPECIAL_TOKEN_RULES}"
            )
        if len(self.cross_attention_layers) != len(self.self_attention_layers):
            raise UnknownProfileError(
                f"profile {self.name!r}: cross/self layer lists must pair up "
                f"positionally ({len(self.cross_attention_layers)} vs "
                f"{len(self.self_attention_layers)})"
            )
        if not self.cross_attention_layers:
            raise UnknownProfileError(
                f"profile {self.name!r}: needs at least one attention layer"
            )
        if self.timestep < 0:
            raise UnknownProfileError(
                f"profile {self.name!r}: timestep must be >= 0"
            )


PROFILES: dict[str, ExtractionProfile] = {
    # Stable Diffusion v1.5 family: 512x512 images, 8x latent downsample,
    # activations captured after noising the latent to t=100, prompts
    # padded to the text encoder's 77-token window, and only the
    # start-of-sentence token treated as the semantic special token.
    "sd15": ExtractionProfile(
        name="sd15",
        model_family="stable-diffusion-v1",
        timestep=100,
        image_size=(512, 512),
        pad_to_length=77,
        special_token_rule="sos",
        dense_feature_layer=(
            "up_blocks.1.attentions.1.transformer_blocks.0.attn1"
        ),
        cross_attention_layers=_transformer_paths("attn2"),
        self_attention_layers=_transformer_paths("attn1"),
    ),
    # Same topology at quarter scale for fast tests and smoke runs.
    "sd15-small": ExtractionProfile(
        name="sd15-small",
        model_family="stable-diffusion-v1",
        timestep=100,
        image_size=(128, 128),
        pad_to_length=16,
        special_token_rule="sos",
        dense_feature_layer=(
            "up_blocks.1.attentions.1.transformer_blocks.0.attn1"
        ),
        cross_attention_layers=_transformer_paths("attn2"),
        self_attention_layers=_transformer_paths("attn1"),
    ),
}


def get_profile(name: str) -> ExtractionProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise UnknownProfileError(
            f"unknown profile {name!r}; available: {sorted(PROFILES)}"
        ) from None
