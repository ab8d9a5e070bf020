from dataclasses import dataclass
from typing import Dict, List, Sequence

import torch

from latent_flow_tts.audio import log_mel
from latent_flow_tts.config import GanConfig, MelConfig
from latent_flow_tts.errors import NonFiniteLossError
from latent_flow_tts.models.discriminators import DiscriminatorOutput


@dataclass
class GanLossWeights:
    lambda_recon: float = 45.0
    lambda_adv: float = 1.0
    lambda_fm: float = 0.1

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"{name}={value} should be non-negative")

    @classmethod
    def from_config(cls, cfg: GanConfig) -> "GanLossWeights":
        return cls(cfg.lambda_recon, cfg.lambda_adv, cfg.lambda_fm)


@dataclass
class GanLosses:
    l_recon: torch.Tensor
    l_adv_g: torch.Tensor
    l_fm: torch.Tensor
    weights: GanLossWeights

    @property
    def total_loss(self) -> torch.Tensor:
        return (
            self.weights.lambda_recon * self.l_recon
            + self.weights.lambda_adv * self.l_adv_g
            + self.weights.lambda_fm * self.l_fm
        )

    def log_dict(self) -> Dict[str, torch.Tensor]:
        return {
            "l_recon": self.l_recon,
            "l_adv_g": self.l_adv_g,
            "l_fm": self.l_fm,
            "l_g": self.total_loss,
        }


def check_finite(**components: torch.Tensor):
    for name, value in components.items():
        if not torch.isfinite(value).all():
            raise NonFiniteLossError(name, value.detach().sum().item())


def reconstruction_loss(
    real: torch.Tensor, fake: torch.Tensor, mel_configs: Sequence[MelConfig]
) -> torch.Tensor:
    """Mean L1 distance between log-mel spectrograms over all resolutions."""
    if real.shape != fake.shape:
        raise ValueError(f"{real.shape=} and {fake.shape=} should match")

    return torch.stack(
        [(log_mel(fake, cfg) - log_mel(real, cfg)).abs().mean() for cfg in mel_configs]
    ).mean()


def adversarial_generator_loss(fake_scores: List[torch.Tensor]) -> torch.Tensor:
    return torch.stack([(s - 1).pow(2).mean() for s in fake_scores]).mean()


def discriminator_loss(
    real_out: DiscriminatorOutput, fake_out: DiscriminatorOutput
) -> torch.Tensor:
    """Least-squares objective with targets +1 (real) and -1 (generated)."""
    loss = torch.stack(
        [
            ((f + 1).pow(2) + (r - 1).pow(2)).mean()
            for r, f in zip(real_out.score_maps, fake_out.score_maps)
        ]
    ).mean()
    check_finite(l_d=loss)
    return loss


def feature_matching_loss(
    real_features: List[torch.Tensor], fake_features: List[torch.Tensor]
) -> torch.Tensor:
    if len(real_features) != len(fake_features):
        raise ValueError(f"{len(real_features)=} and {len(fake_features)=} should match")

    return torch.stack(
        [(f - r.detach()).abs().mean() for r, f in zip(real_features, fake_features)]
    ).mean()


def generator_loss(
    real: torch.Tensor,
    fake: torch.Tensor,
    real_out: DiscriminatorOutput,
    fake_out: DiscriminatorOutput,
    weights: GanLossWeights,
    mel_configs: Sequence[MelConfig],
) -> GanLosses:
    losses = GanLosses(
        l_recon=reconstruction_loss(real, fake, mel_configs),
        l_adv_g=adversarial_generator_loss(fake_out.score_maps),
        l_fm=feature_matching_loss(real_out.feature_maps, fake_out.feature_maps),
        weights=weights,
    )
    check_finite(l_recon=losses.l_recon, l_adv_g=losses.l_adv_g, l_fm=losses.l_fm)
    return losses
