from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import torch
import torchmetrics

from latent_flow_tts.config import ModelConfig
from latent_flow_tts.data.batches import TrainingItem, collate_items
from latent_flow_tts.losses.flow_matching import expand_batch, masked_fm_loss


@dataclass
class ValidationResult:
    loss: float
    # one record per (item, timestep): {"item": i, "t": t, "loss": value}
    dump: List[dict] = field(default_factory=list)


@torch.no_grad()
def validation_loss(
    model,
    items: Sequence[TrainingItem],
    cfg: ModelConfig,
    seed: int = 0,
    timesteps: Optional[Sequence[float]] = None,
) -> ValidationResult:
    """
    Masked flow-matching loss averaged over items and the fixed validation timesteps.
    Reference crops and noise come from per-item generators seeded with `seed + index`,
    so repeated evaluations are comparable.
    """
    timesteps = cfg.flow.val_timesteps if timesteps is None else list(timesteps)
    was_training = model.training
    model.eval()

    param = next(iter(model.parameters()), None)
    device = torch.device("cpu") if param is None else param.device
    dtype = torch.float32 if param is None else param.dtype

    mean = torchmetrics.MeanMetric()
    dump = []
    for i, item in enumerate(items):
        g = torch.Generator().manual_seed(seed + i)
        batch = collate_items([item], cfg, generator=g)

        batch = batch.to(device)
        batch.z1 = batch.z1.to(dtype)

        k = len(timesteps)
        noise = torch.randn((k, *batch.z1.shape[1:]), generator=g, dtype=dtype).to(device)
        t = torch.tensor(timesteps, dtype=dtype, device=device)
        eb = expand_batch(
            model, batch, k, cfg.flow.sigma_min, generator=g, noise=noise, timesteps=t
        )

        pred = model.estimate_vector_field(
            eb.z_t, eb.t, eb.conditions.index_select(eb.source_index), eb.latent_mask
        )
        for j, t_j in enumerate(timesteps):
            loss = masked_fm_loss(pred[j], eb.target[j], eb.mask[j])
            mean.update(loss.detach().cpu().double())
            dump.append({"item": i, "t": float(t_j), "loss": float(loss)})

    if was_training:
        model.train()
    return ValidationResult(loss=float(mean.compute()), dump=dump)
