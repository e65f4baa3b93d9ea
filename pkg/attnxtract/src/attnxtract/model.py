"""A compact UNet with the attention-module topology the hooks target.

The capture machinery addresses attention modules by their qualified
names (``down_blocks.1.attentions.0.transformer_blocks.0.attn2`` and so
on) and reads their ``to_q``/``to_k``/``to_v``/``to_out`` projections —
the naming scheme of Stable Diffusion v1-family UNets. This module
provides a self-contained model with exactly that tree: a latent
encoder-decoder whose attention-bearing blocks sit at the same
resolutions (1/2, 1/4, 1/8 of the latent grid plus the bottleneck),
eight heads throughout, cross-attention over encoded prompt tokens, and
a deterministic text encoder.

Weights are randomly initialized from a seed. Loading a pretrained
checkpoint is a weight-assignment concern, deliberately separated from
capture: everything the extractor reads (module paths, projection
layout, post-softmax semantics) is identical for trained weights, so
`build_models` is the single seam where a real checkpoint would be
substituted. Channel widths here are narrow to keep CPU extraction
fast.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import torch
from torch import nn

LATENT_CHANNELS = 4
LATENT_DOWNSAMPLE = 8
TEXT_DIM = 64
BASE_CHANNELS = (32, 64, 128, 128)
ATTN_HEADS = 8
TIME_DIM = 128


def sinusoidal_embedding(value: float, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10_000.0) * torch.arange(half, dtype=torch.float32) / half
    )
    angles = value * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)])


class Attention(nn.Module):
    """Multi-head attention with separate q/k/v/out projections.

    ``to_out`` is a ModuleList whose first entry is the output
    projection, matching the layout capture hooks expect.
    """

    def __init__(self, dim: int, context_dim: int | None, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim**-0.5
        ctx = context_dim if context_dim is not None else dim
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(ctx, dim, bias=False)
        self.to_v = nn.Linear(ctx, dim, bias=False)
        self.to_out = nn.ModuleList([nn.Linear(dim, dim), nn.Dropout(0.0)])

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.head_dim).transpose(1, 2)

    def forward(
        self, hidden: torch.Tensor, context: torch.Tensor | None = None
    ) -> torch.Tensor:
        ctx = hidden if context is None else context
        q = self._split(self.to_q(hidden))
        k = self._split(self.to_k(ctx))
        v = self._split(self.to_v(ctx))
        attn = torch.softmax(q @ k.transpose(-1, -2) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(hidden.shape[0], -1, q.shape[1] * self.head_dim)
        out = self.to_out[0](out)
        return self.to_out[1](out)


class FeedForward(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, dim * 2), nn.GELU(), nn.Linear(dim * 2, dim)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class BasicTransformerBlock(nn.Module):
    """Self-attention, cross-attention, feed-forward — each residual."""

    def __init__(self, dim: int, context_dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn1 = Attention(dim, None, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.attn2 = Attention(dim, context_dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        x = x + self.attn1(self.norm1(x))
        x = x + self.attn2(self.norm2(x), context)
        return x + self.ff(self.norm3(x))


class SpatialTransformer(nn.Module):
    """Flatten a feature map, run transformer blocks, restore the grid."""

    def __init__(self, channels: int, context_dim: int, heads: int):
        super().__init__()
        self.norm = nn.GroupNorm(8, channels)
        self.proj_in = nn.Conv2d(channels, channels, 1)
        self.transformer_blocks = nn.ModuleList(
            [BasicTransformerBlock(channels, context_dim, heads)]
        )
        self.proj_out = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        residual = x
        out = self.proj_in(self.norm(x))
        out = out.permute(0, 2, 3, 1).reshape(b, h * w, c)
        for block in self.transformer_blocks:
            out = block(out, context)
        out = out.reshape(b, h, w, c).permute(0, 3, 1, 2)
        return self.proj_out(out) + residual


class ResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(TIME_DIM, out_channels)
        self.norm2 = nn.GroupNorm(8, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = (
            nn.Conv2d(in_channels, out_channels, 1)
            if in_channels != out_channels
            else nn.Identity()
        )

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[None, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class Downsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(
            torch.nn.functional.interpolate(x, scale_factor=2, mode="nearest")
        )


class CrossAttnDownBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, downsample: bool):
        super().__init__()
        self.resnets = nn.ModuleList(
            [ResBlock(in_channels, out_channels), ResBlock(out_channels, out_channels)]
        )
        self.attentions = nn.ModuleList(
            [
                SpatialTransformer(out_channels, TEXT_DIM, ATTN_HEADS)
                for _ in range(2)
            ]
        )
        self.downsamplers = (
            nn.ModuleList([Downsample(out_channels)]) if downsample else None
        )

    def forward(self, x, temb, context):
        for resnet, attn in zip(self.resnets, self.attentions):
            x = attn(resnet(x, temb), context)
        skip = x
        if self.downsamplers is not None:
            x = self.downsamplers[0](x)
        return x, skip


class DownBlock(nn.Module):
    """Residual-only encoder block (no attention is captured here)."""

    def __init__(self, in_channels: int, out_channels: int, downsample: bool):
        super().__init__()
        self.resnets = nn.ModuleList(
            [ResBlock(in_channels, out_channels), ResBlock(out_channels, out_channels)]
        )
        self.downsamplers = (
            nn.ModuleList([Downsample(out_channels)]) if downsample else None
        )

    def forward(self, x, temb, context):
        for resnet in self.resnets:
            x = resnet(x, temb)
        skip = x
        if self.downsamplers is not None:
            x = self.downsamplers[0](x)
        return x, skip


class MidBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.resnets = nn.ModuleList(
            [ResBlock(channels, channels), ResBlock(channels, channels)]
        )
        self.attentions = nn.ModuleList(
            [SpatialTransformer(channels, TEXT_DIM, ATTN_HEADS)]
        )

    def forward(self, x, temb, context):
        x = self.resnets[0](x, temb)
        x = self.attentions[0](x, context)
        return self.resnets[1](x, temb)


class UpBlock(nn.Module):
    """Residual-only decoder block (no attention is captured here)."""

    def __init__(self, in_channels: int, out_channels: int, upsample: bool):
        super().__init__()
        self.resnets = nn.ModuleList(
            [ResBlock(in_channels, out_channels), ResBlock(out_channels, out_channels)]
        )
        self.upsamplers = (
            nn.ModuleList([Upsample(out_channels)]) if upsample else None
        )

    def forward(self, x, skip, temb, context):
        x = x + skip
        for resnet in self.resnets:
            x = resnet(x, temb)
        if self.upsamplers is not None:
            x = self.upsamplers[0](x)
        return x


class CrossAttnUpBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, upsample: bool):
        super().__init__()
        self.resnets = nn.ModuleList(
            [
                ResBlock(in_channels, out_channels),
                ResBlock(out_channels, out_channels),
                ResBlock(out_channels, out_channels),
            ]
        )
        self.attentions = nn.ModuleList(
            [
                SpatialTransformer(out_channels, TEXT_DIM, ATTN_HEADS)
                for _ in range(3)
            ]
        )
        self.upsamplers = (
            nn.ModuleList([Upsample(out_channels)]) if upsample else None
        )

    def forward(self, x, skip, temb, context):
        x = x + skip
        for resnet, attn in zip(self.resnets, self.attentions):
            x = attn(resnet(x, temb), context)
        if self.upsamplers is not None:
            x = self.upsamplers[0](x)
        return x


class ConditionedUNet(nn.Module):
    """Latent denoiser with text cross-attention at three scales."""

    def __init__(self):
        super().__init__()
        c0, c1, c2, c3 = BASE_CHANNELS
        self.conv_in = nn.Conv2d(LATENT_CHANNELS, c0, 3, padding=1)
        self.time_mlp = nn.Sequential(
            nn.Linear(32, TIME_DIM), nn.SiLU(), nn.Linear(TIME_DIM, TIME_DIM)
        )
        # Attention sits at 1/2, 1/4 and 1/8 of the latent grid; the
        # full-resolution blocks at either end are residual-only so the
        # forward pass stays cheap on CPU.
        self.down_blocks = nn.ModuleList(
            [
                DownBlock(c0, c0, downsample=True),
                CrossAttnDownBlock(c0, c1, downsample=True),
                CrossAttnDownBlock(c1, c2, downsample=True),
                DownBlock(c2, c3, downsample=False),
            ]
        )
        self.mid_block = MidBlock(c3)
        self.up_blocks = nn.ModuleList(
            [
                UpBlock(c3, c3, upsample=True),
                CrossAttnUpBlock(c3, c2, upsample=True),
                CrossAttnUpBlock(c2, c1, upsample=True),
                UpBlock(c1, c0, upsample=False),
            ]
        )
        self.conv_out = nn.Sequential(
            nn.GroupNorm(8, c0), nn.SiLU(), nn.Conv2d(c0, LATENT_CHANNELS, 3, padding=1)
        )
        # Skip features carry encoder channel counts; map them onto the
        # decoder input channels before the additive merge.
        self.skip_adapt = nn.ModuleList(
            [
                nn.Identity(),            # down3 skip (c3) -> mid output (c3)
                nn.Conv2d(c2, c3, 1),     # down2 skip -> up1 input
                nn.Conv2d(c1, c2, 1),     # down1 skip -> up2 input
                nn.Conv2d(c0, c1, 1),     # down0 skip -> up3 input
            ]
        )

    def forward(
        self, latent: torch.Tensor, timestep: int, text: torch.Tensor
    ) -> torch.Tensor:
        temb = self.time_mlp(sinusoidal_embedding(float(timestep), 32))
        h = self.conv_in(latent)
        skips = []
        for block in self.down_blocks:
            h, skip = block(h, temb, text)
            skips.append(skip)
        h = self.mid_block(h, temb, text)
        h = self.up_blocks[0](h, self.skip_adapt[0](skips[3]), temb, text)
        h = self.up_blocks[1](h, self.skip_adapt[1](skips[2]), temb, text)
        h = self.up_blocks[2](h, self.skip_adapt[2](skips[1]), temb, text)
        h = self.up_blocks[3](h, self.skip_adapt[3](skips[0]), temb, text)
        return self.conv_out(h)


class ImageEncoder(nn.Module):
    """Image (B,3,H,W) in [-1,1] to a latent at 1/8 resolution."""

    def __init__(self):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(32, LATENT_CHANNELS, 3, stride=2, padding=1),
        )

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.net(image)


def _word_vector(word: str, dim: int) -> torch.Tensor:
    """Deterministic per-word embedding: no vocabulary file needed.

    The word's sha256 seeds a private generator, so the same word maps
    to the same vector on every platform and every run.
    """
    digest = hashlib.sha256(word.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    gen = torch.Generator().manual_seed(seed & 0x7FFF_FFFF_FFFF_FFFF)
    return torch.randn(dim, generator=gen)


class TextEncoder(nn.Module):
    """Hash-embedded tokens plus positions through a small MLP."""

    def __init__(self, dim: int = TEXT_DIM):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, dim)
        )

    def forward(self, words: list[str]) -> torch.Tensor:
        rows = [
            _word_vector(word, self.dim)
            + sinusoidal_embedding(float(i), self.dim)
            for i, word in enumerate(words)
        ]
        stacked = torch.stack(rows)[None]  # (1, N, dim)
        return self.mlp(stacked)


@dataclass(frozen=True)
class ModelSet:
    unet: ConditionedUNet
    text_encoder: TextEncoder
    image_encoder: ImageEncoder


def build_models(seed: int) -> ModelSet:
    """Construct the model set with seed-deterministic random weights.

    Substituting pretrained weights for a real checkpoint happens here
    and only here; the capture path is identical either way.
    """
    torch.manual_seed(seed)
    models = ModelSet(
        unet=ConditionedUNet(),
        text_encoder=TextEncoder(),
        image_encoder=ImageEncoder(),
    )
    for module in (models.unet, models.text_encoder, models.image_encoder):
        module.eval()
        module.requires_grad_(False)
    return models
