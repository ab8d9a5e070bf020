import math
import os
from dataclasses import dataclass
from typing import Optional

import torch
from pytorch_lightning.utilities import rank_zero_info

from latent_flow_tts.audio import AudioWaveform, extract_logmel, resample
from latent_flow_tts.checkpoint import CHECKPOINT_FILES, STATS_FILE, load_checkpoint
from latent_flow_tts.config import ModelConfig, checkpoint_dir, config_fingerprint
from latent_flow_tts.errors import (
    ConfigMismatchError,
    EmptyInputError,
    MissingCheckpointError,
    ReferenceTooShortError,
)
from latent_flow_tts.latent_ops import (
    CompressedLatent,
    LatentStats,
    compress,
    decompress,
    denormalize,
    load_stats,
    normalize,
)
from latent_flow_tts.models.autoencoder import SpeechAutoencoder
from latent_flow_tts.models.duration import DurationPredictor
from latent_flow_tts.models.text_to_latent import TextToLatent
from latent_flow_tts.sampler import SamplerConfig, euler_sample
from latent_flow_tts.text import tokenize


def round_duration(frames: float) -> int:
    """Round half up to whole frames, at least one."""
    return max(1, math.floor(frames + 0.5))


@dataclass
class Synthesizer:
    """The three trained stages and the latent statistics, ready for zero-shot synthesis."""

    autoencoder: SpeechAutoencoder
    ttl: TextToLatent
    duration: DurationPredictor
    stats: LatentStats
    cfg: ModelConfig

    @classmethod
    def from_checkpoint_dir(cls, path: Optional[str] = None) -> "Synthesizer":
        """
        Loads autoencoder.ckpt, ttl.ckpt, duration.ckpt and latent_stats.json; all four have to
        stem from the same config.
        """
        path = checkpoint_dir(path)
        autoencoder, cfg = load_checkpoint(
            os.path.join(path, CHECKPOINT_FILES["autoencoder"]), "autoencoder"
        )
        ttl, _ = load_checkpoint(os.path.join(path, CHECKPOINT_FILES["ttl"]), "ttl", expected=cfg)
        duration, _ = load_checkpoint(
            os.path.join(path, CHECKPOINT_FILES["duration"]), "duration", expected=cfg
        )

        stats_path = os.path.join(path, STATS_FILE)
        if not os.path.isfile(stats_path):
            raise MissingCheckpointError(f"no latent statistics at {stats_path}")
        stats = load_stats(stats_path, config_fingerprint(cfg))
        if stats.channels != cfg.compressed_channels:
            raise ConfigMismatchError(
                f"stats hold {stats.channels} channels, config has {cfg.compressed_channels}"
            )

        rank_zero_info(f"loaded {cfg.preset} checkpoints from {path}")
        return cls(autoencoder=autoencoder, ttl=ttl, duration=duration, stats=stats, cfg=cfg)

    def encode_reference(self, reference: AudioWaveform) -> CompressedLatent:
        """Normalized compressed latent of the reference speech."""
        if reference.sample_rate != self.cfg.mel.sample_rate:
            reference = resample(reference, self.cfg.mel.sample_rate)
        if len(reference) == 0:
            raise EmptyInputError("reference audio is empty")

        latent = self.autoencoder.encode(extract_logmel(reference, self.cfg.mel))
        cl = normalize(compress(latent, self.cfg.ttl.k_c), self.stats)

        min_frames = math.ceil(self.cfg.flow.ref_crop_min_s * self.cfg.compressed_frame_rate)
        if cl.n_frames < min_frames:
            raise ReferenceTooShortError(
                f"reference of {cl.n_frames} compressed frames is shorter than {min_frames}"
            )
        return cl

    @torch.no_grad()
    def predict_frames(self, text: str, reference: AudioWaveform) -> int:
        chars = tokenize(text)
        if len(chars) == 0:
            raise EmptyInputError("text is empty")
        return round_duration(self.duration.predict_duration(chars, self.encode_reference(reference)))

    @torch.no_grad()
    def synthesize(
        self,
        text: str,
        reference: AudioWaveform,
        sampler: Optional[SamplerConfig] = None,
        duration_frames: Optional[int] = None,
    ) -> AudioWaveform:
        """
        Speech for `text` in the voice of `reference`: the duration predictor fixes the length
        (unless `duration_frames` is given), the sampler draws the normalized compressed latent,
        which is denormalized, decompressed and decoded.

        :return: audio of exactly duration_frames * K_c * hop samples
        """
        sampler = SamplerConfig() if sampler is None else sampler
        chars = tokenize(text)
        if len(chars) == 0:
            raise EmptyInputError("text is empty")

        ref = self.encode_reference(reference)
        if duration_frames is None:
            duration_frames = round_duration(self.duration.predict_duration(chars, ref))
        elif duration_frames < 1:
            raise ValueError(f"{duration_frames=} should be at least 1")

        ids = chars.to_tensor().unsqueeze(0)
        conditions = self.ttl.encode_conditions(
            ids, torch.ones_like(ids, dtype=torch.bool), ref.values.unsqueeze(0)
        )
        z = euler_sample(self.ttl, conditions, duration_frames, sampler)

        latent = decompress(denormalize(z, self.stats), self.cfg.mel.frame_rate)
        return self.autoencoder.decode(latent)
