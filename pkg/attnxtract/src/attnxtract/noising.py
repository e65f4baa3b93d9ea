"""Closed-form forward noising of a clean latent.

The diffusion forward process admits a one-shot reparameterization: the
latent at step t is a deterministic mix of the clean latent and one
Gaussian draw,

    x_t = sqrt(abar_t) * x_0 + sqrt(1 - abar_t) * eps,

where abar_t is the cumulative product of (1 - beta) over the schedule.
Extraction therefore never runs the stepwise chain — a single forward
pass at the profile's timestep suffices.

The schedule matches the Stable Diffusion v1 training configuration:
1000 steps with betas linear in sqrt-space from 0.00085 to 0.012.
"""

from __future__ import annotations

import torch

TRAIN_STEPS = 1000
BETA_START = 0.00085
BETA_END = 0.012


def alpha_bar(timestep: int, train_steps: int = TRAIN_STEPS) -> float:
    """Cumulative signal coefficient abar_t for the sqrt-linear schedule."""
    if not 0 <= timestep < train_steps:
        raise ValueError(
            f"timestep {timestep} outside the schedule [0, {train_steps})"
        )
    betas = (
        torch.linspace(
            BETA_START**0.5, BETA_END**0.5, train_steps, dtype=torch.float64
        )
        ** 2
    )
    return float(torch.cumprod(1.0 - betas, dim=0)[timestep])


def noise_latent(
    latent: torch.Tensor, timestep: int, generator: torch.Generator
) -> torch.Tensor:
    """One-shot x_t from x_0 with noise drawn from `generator`."""
    abar = alpha_bar(timestep)
    eps = torch.randn(
        latent.shape, generator=generator, dtype=latent.dtype
    )
    return (abar**0.5) * latent + ((1.0 - abar) ** 0.5) * eps
