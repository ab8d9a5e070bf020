from dataclasses import dataclass
from typing import Dict, Optional

import torch

from latent_flow_tts.data.batches import TrainingBatch
from latent_flow_tts.models.text_to_latent import Conditions


def _as_time(t, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=like.dtype, device=like.device)
    return t.reshape(-1, *([1] * (like.dim() - 1))) if t.dim() == 1 else t


def interpolate(
    z0: torch.Tensor, z1: torch.Tensor, t, sigma_min: float = 1e-8
) -> torch.Tensor:
    """z_t = (1 - (1 - sigma_min) t) z0 + t z1, with t scalar or per batch row."""
    if z0.shape != z1.shape:
        raise ValueError(f"{z0.shape=} and {z1.shape=} should match")
    t = _as_time(t, z0)
    return (1 - (1 - sigma_min) * t) * z0 + t * z1


def flow_target(z0: torch.Tensor, z1: torch.Tensor, sigma_min: float = 1e-8) -> torch.Tensor:
    if z0.shape != z1.shape:
        raise ValueError(f"{z0.shape=} and {z1.shape=} should match")
    return z1 - (1 - sigma_min) * z0


def masked_fm_loss(
    pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Mean absolute error over the elements where mask is 1."""
    if pred.shape != target.shape:
        raise ValueError(f"{pred.shape=} and {target.shape=} should match")

    mask = mask.to(pred.dtype).expand_as(pred)
    count = mask.sum()
    if count == 0:
        raise ValueError("mask selects no elements")
    return (mask * (pred - target).abs()).sum() / count


@dataclass
class ExpandedBatch:
    """
    B source items expanded K_e times: per-entry noise, time, noisy latent, target
    and loss mask, (B*K_e, ...), with the conditions encoded once per source item.
    """

    z0: torch.Tensor
    z1: torch.Tensor
    t: torch.Tensor
    z_t: torch.Tensor
    target: torch.Tensor
    mask: torch.Tensor
    latent_mask: torch.Tensor
    conditions: Conditions
    source_index: torch.Tensor
    dropped: torch.Tensor

    @property
    def size(self) -> int:
        return self.z_t.shape[0]


@dataclass
class FlowLosses:
    fm_loss: torch.Tensor

    @property
    def total_loss(self) -> torch.Tensor:
        return self.fm_loss

    def log_dict(self) -> Dict[str, torch.Tensor]:
        return {"fm_loss": self.fm_loss}


def sample_drop_mask(
    batch_size: int, p_uncond: float, generator: Optional[torch.Generator] = None, device=None
) -> torch.Tensor:
    if not 0.0 <= p_uncond <= 1.0:
        raise ValueError(f"{p_uncond=} should lie in [0, 1]")
    return torch.rand(batch_size, generator=generator, dtype=torch.float64).to(device) < p_uncond


def _pad_text(text: torch.Tensor, mask: torch.Tensor, length: int):
    pad = length - text.shape[1]
    if pad == 0:
        return text, mask
    return (
        torch.nn.functional.pad(text, (0, 0, 0, pad)),
        torch.nn.functional.pad(mask, (0, pad), value=False),
    )


def cfg_dropout(
    conditions: Conditions,
    null_conditions: Conditions,
    p_uncond: float,
    generator: Optional[torch.Generator] = None,
    drop: Optional[torch.Tensor] = None,
):
    """
    Replaces text and reference conditions jointly by the null conditions with probability p_uncond
    per item.

    :return: the conditions and the boolean (B,) drop mask
    """
    if drop is None:
        drop = sample_drop_mask(
            conditions.batch_size, p_uncond, generator, conditions.text.device
        )
    if not drop.any():
        return conditions, drop

    length = max(conditions.text.shape[1], null_conditions.text.shape[1])
    text, text_mask = _pad_text(conditions.text, conditions.text_mask, length)
    null_text, null_mask = _pad_text(null_conditions.text, null_conditions.text_mask, length)

    return (
        Conditions(
            text=torch.where(drop[:, None, None], null_text, text),
            text_mask=torch.where(drop[:, None], null_mask, text_mask),
            ref_keys=conditions.ref_keys,
            ref_values=torch.where(
                drop[:, None, None], null_conditions.ref_values, conditions.ref_values
            ),
        ),
        drop,
    )


def expand_batch(
    model,
    batch: TrainingBatch,
    k_e: int,
    sigma_min: float = 1e-8,
    p_uncond: float = 0.0,
    generator: Optional[torch.Generator] = None,
    noise: Optional[torch.Tensor] = None,
    timesteps: Optional[torch.Tensor] = None,
) -> ExpandedBatch:
    """
    Encodes the conditions of the B items once and pairs every item with K_e independent
    (noise, time) draws.

    :param model: text-to-latent model exposing `encode_conditions` and `null_conditions`
    :param noise: optional recorded noise (B*K_e, C, T); drawn from the generator otherwise
    :param timesteps: optional recorded times (B*K_e,); drawn uniformly otherwise
    """
    if k_e < 1:
        raise ValueError(f"{k_e=} should be at least 1")

    b = batch.batch_size
    ref, ref_mask = batch.reference()
    conditions = model.encode_conditions(batch.char_ids, batch.char_mask, ref, ref_mask)
    conditions, dropped = cfg_dropout(
        conditions, model.null_conditions(b), p_uncond, generator
    )

    source_index = torch.arange(b, device=batch.z1.device).repeat_interleave(k_e)
    z1 = batch.z1[source_index]
    if noise is None:
        noise = torch.randn(z1.shape, generator=generator, dtype=z1.dtype).to(z1.device)
    if timesteps is None:
        timesteps = torch.rand(b * k_e, generator=generator, dtype=z1.dtype).to(z1.device)
    if noise.shape != z1.shape or timesteps.shape != (b * k_e,):
        raise ValueError(
            f"{tuple(noise.shape)=} and {tuple(timesteps.shape)=} do not fit {b} items x {k_e=}"
        )

    latent_mask = batch.latent_mask[source_index]
    return ExpandedBatch(
        z0=noise,
        z1=z1,
        t=timesteps,
        z_t=interpolate(noise, z1, timesteps, sigma_min),
        target=flow_target(noise, z1, sigma_min),
        mask=batch.loss_mask()[source_index],
        latent_mask=latent_mask,
        conditions=conditions,
        source_index=source_index,
        dropped=dropped,
    )


def expanded_loss(model, eb: ExpandedBatch) -> FlowLosses:
    pred = model.estimate_vector_field(
        eb.z_t, eb.t, eb.conditions.index_select(eb.source_index), eb.latent_mask
    )
    return FlowLosses(fm_loss=masked_fm_loss(pred, eb.target, eb.mask))


def lr_at_step(step: int, base_lr: float, halve_every: int) -> float:
    """Step-halving schedule: base_lr / 2^floor((step - 1) / halve_every) for 1-based steps."""
    if halve_every < 1:
        raise ValueError(f"{halve_every=} should be at least 1")
    return base_lr * 0.5 ** (max(step - 1, 0) // halve_every)
