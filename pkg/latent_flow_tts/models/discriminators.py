from dataclasses import dataclass, field
from typing import List

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.parametrizations import weight_norm

from latent_flow_tts.audio import log_linear_spectrogram
from latent_flow_tts.config import DiscriminatorConfig


@dataclass
class DiscriminatorOutput:
    """Score maps (one per sub-discriminator) and the flattened per-layer feature maps."""

    score_maps: List[torch.Tensor] = field(default_factory=list)
    feature_maps: List[torch.Tensor] = field(default_factory=list)

    def __add__(self, other: "DiscriminatorOutput") -> "DiscriminatorOutput":
        return DiscriminatorOutput(
            score_maps=self.score_maps + other.score_maps,
            feature_maps=self.feature_maps + other.feature_maps,
        )


def period_padding(length: int, period: int) -> int:
    """Right padding that makes `length` a multiple of `period`."""
    return (period - length % period) % period


class PeriodDiscriminator(nn.Module):
    def __init__(
        self,
        period: int,
        channels: List[int],
        kernel: int = 5,
        stride: int = 3,
        lrelu_slope: float = 0.1,
    ):
        super().__init__()
        self.period = period
        self.lrelu_slope = lrelu_slope

        convs = []
        c_in = 1
        for i, c_out in enumerate(channels):
            last = i == len(channels) - 1
            k = 3 if last else kernel
            # the last two layers keep the time resolution
            s = 1 if i >= len(channels) - 2 else stride
            convs.append(
                weight_norm(nn.Conv2d(c_in, c_out, (k, 1), (s, 1), padding=(k // 2, 0)))
            )
            c_in = c_out
        self.convs = nn.ModuleList(convs)

    def forward(self, audio: torch.Tensor):
        """
        :param audio: tensor of shape (B, N)
        :return: score map (B, -1) and the per-layer features
        """
        b, n = audio.shape
        if n < self.period:
            raise ValueError(f"segment of {n} samples is shorter than {self.period=}")

        pad = period_padding(n, self.period)
        x = F.pad(audio.unsqueeze(1), (0, pad), mode="reflect") if pad else audio.unsqueeze(1)
        x = x.view(b, 1, (n + pad) // self.period, self.period)

        features = []
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = F.leaky_relu(x, self.lrelu_slope)
            features.append(x)
        return torch.flatten(x, 1, -1), features


class MultiPeriodDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.discriminators = nn.ModuleList(
            [
                PeriodDiscriminator(
                    p, cfg.mpd_channels, cfg.mpd_kernel, cfg.mpd_stride, cfg.lrelu_slope
                )
                for p in cfg.periods
            ]
        )

    def forward(self, audio: torch.Tensor) -> DiscriminatorOutput:
        out = DiscriminatorOutput()
        for d in self.discriminators:
            score, features = d(audio)
            out.score_maps.append(score)
            out.feature_maps.extend(features)
        return out


class ResolutionDiscriminator(nn.Module):
    """2-D conv stack over the log-scaled linear spectrogram of one FFT resolution."""

    def __init__(
        self,
        fft_size: int,
        channels: List[int],
        kernels: List[List[int]],
        strides: List[List[int]],
        lrelu_slope: float = 0.1,
        log_floor: float = 1e-5,
    ):
        super().__init__()
        if not len(channels) == len(kernels) == len(strides):
            raise ValueError(f"{len(channels)=}, {len(kernels)=}, {len(strides)=} should match")

        self.fft_size = fft_size
        self.lrelu_slope = lrelu_slope
        self.log_floor = log_floor

        convs = []
        c_in = 1
        for c_out, k, s in zip(channels, kernels, strides):
            convs.append(
                weight_norm(
                    nn.Conv2d(
                        c_in, c_out, tuple(k), tuple(s), padding=(k[0] // 2, k[1] // 2)
                    )
                )
            )
            c_in = c_out
        self.convs = nn.ModuleList(convs)

    def forward(self, audio: torch.Tensor):
        x = log_linear_spectrogram(audio, self.fft_size, self.log_floor).unsqueeze(1)

        features = []
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = F.leaky_relu(x, self.lrelu_slope)
            features.append(x)
        return torch.flatten(x, 1, -1), features


class MultiResolutionDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig, log_floor: float = 1e-5):
        super().__init__()
        self.discriminators = nn.ModuleList(
            [
                ResolutionDiscriminator(
                    fft,
                    cfg.mrd_channels,
                    cfg.mrd_kernels,
                    cfg.mrd_strides,
                    cfg.lrelu_slope,
                    log_floor,
                )
                for fft in cfg.mrd_fft_sizes
            ]
        )

    def forward(self, audio: torch.Tensor) -> DiscriminatorOutput:
        out = DiscriminatorOutput()
        for d in self.discriminators:
            score, features = d(audio)
            out.score_maps.append(score)
            out.feature_maps.extend(features)
        return out


class Discriminators(nn.Module):
    """MPD and MRD evaluated together; the outputs are concatenated MPD first."""

    def __init__(self, cfg: DiscriminatorConfig, log_floor: float = 1e-5):
        super().__init__()
        self.mpd = MultiPeriodDiscriminator(cfg)
        self.mrd = MultiResolutionDiscriminator(cfg, log_floor)

    def forward(self, audio: torch.Tensor) -> DiscriminatorOutput:
        return self.mpd(audio) + self.mrd(audio)


def mpd_forward(mpd: MultiPeriodDiscriminator, audio: torch.Tensor) -> DiscriminatorOutput:
    return mpd(audio if audio.dim() == 2 else audio.unsqueeze(0))


def mrd_forward(mrd: MultiResolutionDiscriminator, audio: torch.Tensor) -> DiscriminatorOutput:
    return mrd(audio if audio.dim() == 2 else audio.unsqueeze(0))
