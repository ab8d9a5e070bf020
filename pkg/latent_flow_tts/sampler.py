from dataclasses import dataclass
from typing import Callable, Optional

import torch

from latent_flow_tts.latent_ops import CompressedLatent
from latent_flow_tts.models.text_to_latent import Conditions


@dataclass
class SamplerConfig:
    nfe: int = 32
    cfg_scale: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.nfe < 1:
            raise ValueError(f"{self.nfe=} should be at least 1")
        if self.cfg_scale < 0:
            raise ValueError(f"{self.cfg_scale=} should be non-negative")


def cfg_field(v_cond: torch.Tensor, v_uncond: torch.Tensor, scale: float) -> torch.Tensor:
    """Classifier-free guidance: v_uncond + scale * (v_cond - v_uncond)."""
    if v_cond.shape != v_uncond.shape:
        raise ValueError(f"{v_cond.shape=} and {v_uncond.shape=} should match")
    if scale == 1.0:
        return v_cond
    if scale == 0.0:
        return v_uncond
    return v_uncond + scale * (v_cond - v_uncond)


def euler_integrate(
    velocity: Callable[[torch.Tensor, torch.Tensor], torch.Tensor], z0: torch.Tensor, nfe: int
) -> torch.Tensor:
    """Integrates dz/dt = velocity(z, t) from t=0 to 1 in `nfe` uniform steps at t_k = k / nfe."""
    if nfe < 1:
        raise ValueError(f"{nfe=} should be at least 1")
    z = z0
    dt = 1.0 / nfe
    for k in range(nfe):
        t = torch.tensor(k / nfe, dtype=z.dtype, device=z.device)
        z = z + dt * velocity(z, t)
    return z


@torch.no_grad()
def euler_sample_batch(
    model,
    conditions: Conditions,
    length_frames: int,
    cfg: SamplerConfig,
    z0: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Samples (B, K_c*C, length_frames) normalized compressed latents from N(0, 1) noise.
    The model is evaluated `nfe` times with cfg_scale 1 and `2 * nfe` times otherwise.
    """
    if length_frames < 1:
        raise ValueError(f"{length_frames=} should be at least 1")

    b = conditions.batch_size
    if z0 is None:
        g = torch.Generator().manual_seed(cfg.seed)
        z0 = torch.randn(b, model.cfg.compressed_channels, length_frames, generator=g)
        z0 = z0.to(device=conditions.text.device, dtype=conditions.text.dtype)
    if z0.shape[0] != b or z0.shape[-1] != length_frames:
        raise ValueError(f"{tuple(z0.shape)=} does not fit {b} items of {length_frames} frames")

    null = None if cfg.cfg_scale == 1.0 else model.null_conditions(b)

    def velocity(z: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        v_cond = model.estimate_vector_field(z, t, conditions)
        if null is None:
            return v_cond
        return cfg_field(v_cond, model.estimate_vector_field(z, t, null), cfg.cfg_scale)

    return euler_integrate(velocity, z0, cfg.nfe)


def euler_sample(
    model,
    conditions: Conditions,
    length_frames: int,
    cfg: SamplerConfig,
    z0: Optional[torch.Tensor] = None,
) -> CompressedLatent:
    """Single-utterance form of `euler_sample_batch`."""
    if conditions.batch_size != 1:
        raise ValueError(f"{conditions.batch_size=}, use euler_sample_batch for batches")
    z = euler_sample_batch(model, conditions, length_frames, cfg, z0)
    return CompressedLatent(values=z[0], k_c=model.cfg.ttl.k_c)
