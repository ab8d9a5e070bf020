from typing import Any, Dict, List, Optional, Tuple

import pytorch_lightning as pl
import torch
import torch.nn.functional as F
from torch import nn

from latent_flow_tts.audio import recon_mel_configs
from latent_flow_tts.config import ModelConfig, config_from_dict, config_to_dict, full_preset
from latent_flow_tts.data.batches import DurationBatch, TrainingBatch
from latent_flow_tts.losses.flow_matching import expand_batch, expanded_loss, lr_at_step
from latent_flow_tts.losses.gan import GanLossWeights, check_finite, discriminator_loss, generator_loss
from latent_flow_tts.metrics.validation import validation_loss
from latent_flow_tts.models.autoencoder import SpeechAutoencoder
from latent_flow_tts.models.discriminators import Discriminators
from latent_flow_tts.models.duration import DurationPredictor
from latent_flow_tts.models.text_to_latent import TextToLatent
from latent_flow_tts.profiler import to_meta, ttl_step_flops


def _config(config: Optional[Dict[str, Any]]) -> ModelConfig:
    return full_preset() if config is None else config_from_dict(config)


class _RunnerBase(pl.LightningModule):
    metrics_columns: Tuple[str, ...] = ()

    def __init__(self, config: Optional[Dict[str, Any]] = None, **hparams):
        """
        :param config: nested ModelConfig as a dict (see `config_to_dict`), the full preset by default
        """
        super().__init__()
        self.cfg = _config(config)
        self.save_hyperparameters({"config": config_to_dict(self.cfg), **hparams})
        self.last_metrics: Dict[str, float] = {}

    def transfer_batch_to_device(self, batch, device, dataloader_idx):
        if isinstance(batch, (TrainingBatch, DurationBatch)):
            return batch.to(device)
        if isinstance(batch, list):
            # validation items are moved by `validation_loss`
            return batch
        return super().transfer_batch_to_device(batch, device, dataloader_idx)

    @property
    def current_lr(self) -> float:
        return self.optimizers().param_groups[0]["lr"]


class AutoencoderModule(_RunnerBase):
    """Adversarial training of the speech autoencoder with alternating discriminator and generator steps."""

    metrics_columns = ("step", "l_recon", "l_adv_g", "l_fm", "l_d", "wall_ms")

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        super().__init__(config)
        self.automatic_optimization = False

        self.autoencoder = SpeechAutoencoder(self.cfg)
        self.discriminators = Discriminators(self.cfg.discriminator, self.cfg.mel.log_floor)
        self.weights = GanLossWeights.from_config(self.cfg.gan)
        self.mel_configs = recon_mel_configs(self.cfg.gan, self.cfg.mel)

    def configure_optimizers(self):
        gan = self.cfg.gan
        kwargs = dict(lr=gan.lr, betas=tuple(gan.betas), weight_decay=gan.weight_decay)
        return [
            torch.optim.AdamW(self.autoencoder.parameters(), **kwargs),
            torch.optim.AdamW(self.discriminators.parameters(), **kwargs),
        ]

    def training_step(self, batch: torch.Tensor, batch_idx):
        panel_name = "Train"
        opt_g, opt_d = self.optimizers()
        real = batch
        fake = self.autoencoder(real)

        l_d = discriminator_loss(self.discriminators(real), self.discriminators(fake.detach()))
        opt_d.zero_grad()
        self.manual_backward(l_d)
        opt_d.step()

        losses = generator_loss(
            real,
            fake,
            self.discriminators(real),
            self.discriminators(fake),
            self.weights,
            self.mel_configs,
        )
        opt_g.zero_grad()
        self.manual_backward(losses.total_loss)
        opt_g.step()

        self.log_dict({f"{panel_name}/{k}": v for k, v in losses.log_dict().items()})
        self.log(f"{panel_name}/l_d", l_d)

        self.last_metrics = {
            "l_recon": losses.l_recon.item(),
            "l_adv_g": losses.l_adv_g.item(),
            "l_fm": losses.l_fm.item(),
            "l_d": l_d.item(),
        }


class TextToLatentModule(_RunnerBase):
    """Flow-matching training of the text-to-latent module with context-sharing batch expansion."""

    metrics_columns = ("step", "loss", "lr", "wall_ms", "flops_step")

    def __init__(self, config: Optional[Dict[str, Any]] = None, val_seed: int = 0):
        """
        :param val_seed: seed of the fixed validation noise and crops
        """
        super().__init__(config, val_seed=val_seed)
        self.model = TextToLatent(self.cfg)
        # (global step, validation loss) per evaluation
        self.val_history: List[Tuple[int, float]] = []
        # meta copy kept out of the module tree so device moves skip it
        self._meta_cache: Dict[str, nn.Module] = {}
        self._flops: Dict[tuple, int] = {}

    def configure_optimizers(self):
        flow = self.cfg.flow
        optimizer = torch.optim.AdamW(
            self.model.parameters(), lr=flow.lr, betas=tuple(flow.betas), weight_decay=flow.weight_decay
        )
        # LambdaLR passes the 0-based count of finished steps
        scheduler = torch.optim.lr_scheduler.LambdaLR(
            optimizer, lambda step: lr_at_step(step + 1, 1.0, flow.halve_every)
        )
        return [optimizer], [{"scheduler": scheduler, "interval": "step"}]

    def step_flops(self, batch: TrainingBatch) -> int:
        """Forward FLOPs of the expanded step at the batch's shapes, cached per shape."""
        ref, _ = batch.reference()
        key = (batch.batch_size, batch.z1.shape[-1], batch.char_ids.shape[-1], ref.shape[-1])
        if key not in self._flops:
            if "model" not in self._meta_cache:
                self._meta_cache["model"] = to_meta(self.model)
            self._flops[key] = ttl_step_flops(
                self._meta_cache["model"], key[0], self.cfg.flow.k_e, key[1], key[2], key[3]
            ).flops
        return self._flops[key]

    def training_step(self, batch: TrainingBatch, batch_idx):
        panel_name = "Train"
        lr = self.current_lr
        flow = self.cfg.flow
        eb = expand_batch(self.model, batch, flow.k_e, flow.sigma_min, flow.p_uncond)
        losses = expanded_loss(self.model, eb)
        check_finite(fm_loss=losses.fm_loss)

        self.log_dict({f"{panel_name}/{k}": v for k, v in losses.log_dict().items()})
        self.log(f"{panel_name}/lr", lr)

        self.last_metrics = {"loss": losses.total_loss.item(), "lr": lr}
        return losses.total_loss

    def untimed_metrics(self, batch: TrainingBatch) -> Dict[str, int]:
        return {"flops_step": self.step_flops(batch)}

    def validation_step(self, batch, batch_idx):
        panel_name = "Val"
        result = validation_loss(self.model, batch, self.cfg, seed=self.hparams.val_seed)
        self.val_history.append((self.global_step, result.loss))
        self.log(f"{panel_name}/fm_loss", result.loss, on_epoch=True, on_step=False)
        self.log("val_loss", result.loss, on_epoch=True, on_step=False)


class DurationModule(_RunnerBase):
    """L1 regression of the utterance length in compressed frames."""

    metrics_columns = ("step", "loss", "lr", "wall_ms")

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        super().__init__(config)
        self.model = DurationPredictor(self.cfg)

    def configure_optimizers(self):
        dt = self.cfg.duration_training
        return torch.optim.AdamW(
            self.model.parameters(), lr=dt.lr, betas=tuple(dt.betas), weight_decay=dt.weight_decay
        )

    def training_step(self, batch: DurationBatch, batch_idx):
        panel_name = "Train"
        lr = self.current_lr
        pred = self.model(batch.char_ids, batch.char_mask, batch.ref, batch.ref_mask)
        loss = F.l1_loss(pred, batch.target)
        check_finite(l1=loss)

        self.log(f"{panel_name}/l1", loss)
        self.last_metrics = {"loss": loss.item(), "lr": lr}
        return loss
