"""Forward-hook capture of attention maps, head outputs and features.

Hooks attach to attention modules addressed by qualified name. Each hook
receives the module's normalized input sequence (and, for
cross-attention, the encoder states) and recomputes the per-head
attention with the module's own projection weights:

* cross layers keep the full post-softmax stack, one map per head, plus
  each head's output ``A_n V_n W_n^O`` — the attention-weighted values
  pushed through that head's slice of the output projection, so the sum
  over heads reproduces the module output up to the projection bias;
* self layers keep the head-averaged map;
* one designated module also donates its input sequence as the dense
  feature map.

Everything is captured in float32 on a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import CaptureError
from .profiles import ExtractionProfile

MAX_GRID_DEPTH = 8  # search levels when inferring a grid from a pixel count


@dataclass
class CrossCapture:
    name: str
    height: int
    width: int
    token_count: int
    head_dim: int  # width of one head-output row (the module's model dim)
    attn: np.ndarray  # (heads, height*width, token_count)
    head_out: np.ndarray  # (heads, height*width, head_dim)
    output: np.ndarray  # (height*width, head_dim) module output, for checks


@dataclass
class SelfCapture:
    name: str
    height: int
    width: int
    attn_mean: np.ndarray  # (height*width, height*width)


@dataclass
class FeatureCapture:
    name: str
    height: int
    width: int
    channels: int
    values: np.ndarray  # (height*width, channels)


@dataclass
class CaptureSet:
    cross: list[CrossCapture]
    selfs: list[SelfCapture]
    feature: FeatureCapture


def infer_grid(pixels: int, latent_h: int, latent_w: int, where: str) -> tuple[int, int]:
    """Map a flattened sequence length back to its 2-d grid.

    Attention operates on the latent grid halved some number of times;
    try each halving depth and accept the one whose area matches.
    """
    for depth in range(MAX_GRID_DEPTH):
        h, w = latent_h >> depth, latent_w >> depth
        if h < 1 or w < 1:
            break
        if h * w == pixels:
            return h, w
    raise CaptureError(
        f"{where}: sequence length {pixels} does not match any halving of "
        f"the {latent_h}x{latent_w} latent grid"
    )


def _to_array(t: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(t.detach().cpu().numpy(), dtype=np.float32)


def _per_head_attention(module, hidden: torch.Tensor, context: torch.Tensor):
    """Recompute post-softmax per-head attention plus the value heads."""
    heads = int(module.heads)
    q = module.to_q(hidden)
    k = module.to_k(context)
    v = module.to_v(context)
    _, p, inner = q.shape
    if inner % heads:
        raise CaptureError(f"projection width {inner} not divisible by {heads} heads")
    dh = inner // heads
    n = k.shape[1]
    qh = q.view(1, p, heads, dh).permute(0, 2, 1, 3)
    kh = k.view(1, n, heads, dh).permute(0, 2, 1, 3)
    vh = v.view(1, n, heads, dh).permute(0, 2, 1, 3)
    attn = torch.softmax(qh @ kh.transpose(-1, -2) * dh**-0.5, dim=-1)
    return attn[0], vh[0], dh


class CaptureSession:
    """Registers hooks for one profile; use as a context manager."""

    def __init__(self, unet: torch.nn.Module, profile: ExtractionProfile,
                 latent_h: int, latent_w: int):
        self.profile = profile
        self.latent_h = latent_h
        self.latent_w = latent_w
        self.cross: dict[str, CrossCapture] = {}
        self.selfs: dict[str, SelfCapture] = {}
        self.feature: FeatureCapture | None = None
        self._handles = []

        modules = dict(unet.named_modules())
        try:
            for name in profile.cross_attention_layers:
                self._handles.append(
                    self._module(modules, name).register_forward_hook(
                        self._cross_hook(name), with_kwargs=True
                    )
                )
            for name in profile.self_attention_layers:
                self._handles.append(
                    self._module(modules, name).register_forward_hook(
                        self._self_hook(name), with_kwargs=True
                    )
                )
            self._handles.append(
                self._module(
                    modules, profile.dense_feature_layer
                ).register_forward_hook(
                    self._feature_hook(profile.dense_feature_layer),
                    with_kwargs=True,
                )
            )
        except Exception:
            self.close()  # keep no stray hooks when registration fails midway
            raise

    @staticmethod
    def _module(modules: dict, name: str) -> torch.nn.Module:
        if name not in modules:
            raise CaptureError(f"model has no module named {name!r}")
        return modules[name]

    def close(self) -> None:
        for handle in self._handles:
            handle.remove()
        self._handles.clear()

    def __enter__(self) -> "CaptureSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # --- hooks ---------------------------------------------------------------

    def _check_batch(self, hidden: torch.Tensor, name: str) -> None:
        if hidden.ndim != 3 or hidden.shape[0] != 1:
            raise CaptureError(
                f"{name}: expected a (1, seq, dim) input, got {tuple(hidden.shape)}"
            )

    @staticmethod
    def _find_context(args, kwargs) -> torch.Tensor | None:
        """Encoder states arrive positionally or under a keyword."""
        if len(args) > 1 and args[1] is not None:
            return args[1]
        for key in ("encoder_hidden_states", "context"):
            if kwargs.get(key) is not None:
                return kwargs[key]
        return None

    def _cross_hook(self, name: str):
        def hook(module, args, kwargs, output):
            self._check_batch(args[0], name)
            context = self._find_context(args, kwargs)
            if context is None:
                raise CaptureError(f"{name}: cross-attention got no encoder states")
            hidden = args[0]
            attn, vh, dh = _per_head_attention(module, hidden, context)
            h, w = infer_grid(attn.shape[1], self.latent_h, self.latent_w, name)
            weight = module.to_out[0].weight  # (dim, heads * dh)
            dim = weight.shape[0]
            per_head_w = weight.T.reshape(module.heads, dh, dim)
            head_out = torch.einsum("hpd,hdm->hpm", attn @ vh, per_head_w)
            self._store_once(
                self.cross, name,
                CrossCapture(
                    name=name, height=h, width=w,
                    token_count=attn.shape[2], head_dim=dim,
                    attn=_to_array(attn), head_out=_to_array(head_out),
                    output=_to_array(output[0]),
                ),
            )

        return hook

    def _self_hook(self, name: str):
        def hook(module, args, kwargs, output):
            self._check_batch(args[0], name)
            hidden = args[0]
            attn, _, _ = _per_head_attention(module, hidden, hidden)
            h, w = infer_grid(attn.shape[1], self.latent_h, self.latent_w, name)
            self._store_once(
                self.selfs, name,
                SelfCapture(
                    name=name, height=h, width=w,
                    attn_mean=_to_array(attn.mean(dim=0)),
                ),
            )

        return hook

    def _feature_hook(self, name: str):
        def hook(module, args, kwargs, output):
            self._check_batch(args[0], name)
            hidden = args[0][0]  # (seq, dim)
            h, w = infer_grid(
                hidden.shape[0], self.latent_h, self.latent_w, f"{name} (feature)"
            )
            if self.feature is not None:
                raise CaptureError(f"{name}: dense feature captured twice")
            self.feature = FeatureCapture(
                name=name, height=h, width=w,
                channels=hidden.shape[1], values=_to_array(hidden),
            )

        return hook

    @staticmethod
    def _store_once(store: dict, name: str, capture) -> None:
        if name in store:
            raise CaptureError(f"{name}: module ran twice in one forward pass")
        store[name] = capture

    # --- collection ----------------------------------------------------------

    def result(self) -> CaptureSet:
        """Captures ordered as the profile lists them; all must be present."""
        missing = [
            name for name in self.profile.cross_attention_layers
            if name not in self.cross
        ]
        missing += [
            name for name in self.profile.self_attention_layers
            if name not in self.selfs
        ]
        if missing:
            raise CaptureError(f"no activations captured for {missing}")
        if self.feature is None:
            raise CaptureError(
                f"no dense feature captured from {self.profile.dense_feature_layer!r}"
            )
        return CaptureSet(
            cross=[self.cross[n] for n in self.profile.cross_attention_layers],
            selfs=[self.selfs[n] for n in self.profile.self_attention_layers],
            feature=self.feature,
        )
