import json
import os
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple, Union

import torch
from pytorch_lightning.utilities import rank_zero_warn

from latent_flow_tts.errors import ConfigMismatchError

STATS_FORMAT_VERSION = 1


@dataclass
class Latent:
    """Frame-indexed autoencoder latent of shape (C, T)."""

    values: torch.Tensor
    frame_rate: float

    def __post_init__(self):
        if self.values.dim() != 2:
            raise ValueError(f"expected a (C, T) latent, got shape {tuple(self.values.shape)}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class CompressedLatent:
    """
    Latent with k_c consecutive frames stacked into the channel axis, shape (k_c * C, T / k_c).
    pad_frames counts the zero frames appended to the source before stacking.
    """

    values: torch.Tensor
    k_c: int
    pad_frames: int = 0

    def __post_init__(self):
        if self.values.dim() != 2:
            raise ValueError(
                f"expected a (K_c*C, T') latent, got shape {tuple(self.values.shape)}"
            )
        if self.values.shape[0] % self.k_c != 0:
            raise ValueError(
                f"channel count {self.values.shape[0]} is not divisible by {self.k_c=}"
            )

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def source_frames(self) -> int:
        return self.n_frames * self.k_c - self.pad_frames


def compress_tensor(x: torch.Tensor, k_c: int) -> Tuple[torch.Tensor, int]:
    """
    Stacks k_c consecutive frames into channels: out[..., c*k_c + j, t] = x[..., c, t*k_c + j].
    The time axis is right-padded with zeros up to a multiple of k_c.

    :param x: tensor of shape (..., C, T)
    :return: tensor of shape (..., C * k_c, ceil(T / k_c)) and the number of pad frames
    """
    if k_c < 1:
        raise ValueError(f"{k_c=} should be at least 1")

    *lead, channels, frames = x.shape
    pad = (-frames) % k_c
    if pad > 0:
        x = torch.nn.functional.pad(x, (0, pad))

    n_out = (frames + pad) // k_c
    x = x.reshape(*lead, channels, n_out, k_c).transpose(-1, -2)
    return x.reshape(*lead, channels * k_c, n_out), pad


def decompress_tensor(x: torch.Tensor, k_c: int, pad_frames: int = 0) -> torch.Tensor:
    *lead, stacked, n_frames = x.shape
    if stacked % k_c != 0:
        raise ValueError(f"channel count {stacked} is not divisible by {k_c=}")
    if not 0 <= pad_frames < k_c:
        raise ValueError(f"{pad_frames=} should be in [0, {k_c})")

    channels = stacked // k_c
    x = x.reshape(*lead, channels, k_c, n_frames).transpose(-1, -2)
    x = x.reshape(*lead, channels, n_frames * k_c)
    return x[..., : n_frames * k_c - pad_frames]


def compress(latent: Union[Latent, torch.Tensor], k_c: int) -> CompressedLatent:
    values = latent.values if isinstance(latent, Latent) else latent
    out, pad = compress_tensor(values, k_c)
    return CompressedLatent(values=out, k_c=k_c, pad_frames=pad)


def decompress(cl: CompressedLatent, frame_rate: float = float("nan")) -> Latent:
    return Latent(
        values=decompress_tensor(cl.values, cl.k_c, cl.pad_frames), frame_rate=frame_rate
    )


@dataclass(frozen=True)
class LatentStats:
    mean: torch.Tensor
    std: torch.Tensor
    sample_count: int
    k_c: int = 1

    @property
    def channels(self) -> int:
        return self.mean.shape[0]


def fit_stats(
    latents: Iterable[Union[CompressedLatent, torch.Tensor]],
    k_c: Optional[int] = None,
    eps: float = 1e-5,
) -> LatentStats:
    """
    Channel-wise mean and (population) standard deviation over all frames of a corpus.
    Channels whose std falls below eps are clamped to eps.
    """
    total, total_sq, count = None, None, 0
    for item in latents:
        if isinstance(item, CompressedLatent):
            k_c = item.k_c if k_c is None else k_c
            if item.k_c != k_c:
                raise ValueError(f"mixed compression factors {item.k_c} and {k_c}")
            values = item.values
        else:
            values = item
        values = values.detach().double()

        if total is None:
            total = values.new_zeros(values.shape[0])
            total_sq = values.new_zeros(values.shape[0])
        elif values.shape[0] != total.shape[0]:
            raise ValueError(
                f"channel count {values.shape[0]} differs from {total.shape[0]}"
            )

        total += values.sum(dim=1)
        total_sq += values.pow(2).sum(dim=1)
        count += values.shape[1]

    if count < 2:
        raise ValueError(f"fitting statistics needs at least 2 frames, got {count}")

    mean = total / count
    var = (total_sq / count - mean.pow(2)).clamp(min=0.0)
    std = var.sqrt()

    if (clamped := std < eps).any():
        rank_zero_warn(
            f"std of channels {clamped.nonzero().flatten().tolist()} clamped to {eps}"
        )
        std = std.clamp(min=eps)

    return LatentStats(
        mean=mean.float(), std=std.float(), sample_count=count, k_c=1 if k_c is None else k_c
    )


def _check_channels(cl: CompressedLatent, stats: LatentStats):
    if cl.channels != stats.channels:
        raise ValueError(f"latent has {cl.channels} channels, stats have {stats.channels}")


def normalize(cl: CompressedLatent, stats: LatentStats) -> CompressedLatent:
    _check_channels(cl, stats)
    mean, std = (s.to(cl.values).unsqueeze(-1) for s in (stats.mean, stats.std))
    return CompressedLatent((cl.values - mean) / std, cl.k_c, cl.pad_frames)


def denormalize(cl: CompressedLatent, stats: LatentStats) -> CompressedLatent:
    _check_channels(cl, stats)
    mean, std = (s.to(cl.values).unsqueeze(-1) for s in (stats.mean, stats.std))
    return CompressedLatent(cl.values * std + mean, cl.k_c, cl.pad_frames)


def save_stats(path: str, stats: LatentStats, fingerprint: Optional[str] = None) -> None:
    payload = dict(
        format_version=STATS_FORMAT_VERSION,
        channels=stats.channels,
        k_c=stats.k_c,
        fingerprint=fingerprint,
        mean=stats.mean.tolist(),
        std=stats.std.tolist(),
        sample_count=stats.sample_count,
    )
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        json.dump(payload, f, indent=2)
    os.replace(tmp, path)


def load_stats(path: str, fingerprint: Optional[str] = None) -> LatentStats:
    with open(path) as f:
        payload = json.load(f)

    if fingerprint is not None and payload.get("fingerprint") not in (None, fingerprint):
        raise ConfigMismatchError(f"stats at {path} were fitted under another config")

    mean = torch.tensor(payload["mean"], dtype=torch.float32)
    std = torch.tensor(payload["std"], dtype=torch.float32)
    if mean.shape[0] != payload["channels"] or std.shape[0] != payload["channels"]:
        raise ValueError(f"stats at {path} do not hold {payload['channels']} channels")

    return LatentStats(mean=mean, std=std, sample_count=payload["sample_count"], k_c=payload["k_c"])
