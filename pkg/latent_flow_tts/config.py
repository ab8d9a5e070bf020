import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Union

from omegaconf import DictConfig, OmegaConf

PresetType = Literal["full", "toy"]

CHECKPOINT_DIR_ENV = "LATENT_FLOW_TTS_CHECKPOINT_DIR"


@dataclass
class MelConfig:
    fft_size: int = 2048
    hop_size: int = 512
    win_size: int = 2048
    n_mels: int = 228
    sample_rate: int = 44100
    log_floor: float = 1e-5
    f_min: float = 0.0
    f_max: Optional[float] = None

    def __post_init__(self):
        if self.win_size > self.fft_size:
            raise ValueError(f"{self.win_size=} must not exceed {self.fft_size=}")
        if self.hop_size > self.win_size:
            raise ValueError(f"{self.hop_size=} must not exceed {self.win_size=}")
        if self.n_mels >= self.fft_size // 2 + 1:
            raise ValueError(f"{self.n_mels=} must be below fft_size/2+1")
        if self.sample_rate <= 0:
            raise ValueError(f"{self.sample_rate=} must be positive")

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop_size


@dataclass
class AutoencoderConfig:
    latent_dim: int = 24
    width: int = 512
    intermediate: int = 2048
    n_encoder_blocks: int = 10
    encoder_kernel: int = 7
    decoder_kernel: int = 7
    decoder_dilations: List[int] = field(
        default_factory=lambda: [1, 2, 4, 1, 2, 4, 1, 1, 1, 1]
    )
    head_kernel: int = 3
    head_hidden: int = 2048
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    init_std: float = 0.02


@dataclass
class DiscriminatorConfig:
    periods: List[int] = field(default_factory=lambda: [2, 3, 5, 7, 11])
    mpd_channels: List[int] = field(default_factory=lambda: [16, 64, 256, 512, 512, 1])
    mpd_kernel: int = 5
    mpd_stride: int = 3
    mrd_fft_sizes: List[int] = field(default_factory=lambda: [512, 1024, 2048])
    mrd_channels: List[int] = field(default_factory=lambda: [16, 16, 16, 16, 16, 1])
    mrd_kernels: List[List[int]] = field(
        default_factory=lambda: [[5, 5], [5, 5], [5, 5], [5, 5], [5, 5], [3, 3]]
    )
    mrd_strides: List[List[int]] = field(
        default_factory=lambda: [[1, 1], [2, 1], [2, 1], [2, 1], [1, 1], [1, 1]]
    )
    lrelu_slope: float = 0.1


@dataclass
class GanConfig:
    lambda_recon: float = 45.0
    lambda_adv: float = 1.0
    lambda_fm: float = 0.1
    lr: float = 2e-4
    betas: List[float] = field(default_factory=lambda: [0.8, 0.99])
    weight_decay: float = 0.01
    batch_size: int = 128
    segment_samples: int = 8192
    recon_fft_sizes: List[int] = field(default_factory=lambda: [1024, 2048, 4096])
    recon_n_mels: List[int] = field(default_factory=lambda: [64, 128, 128])


@dataclass
class TextToLatentConfig:
    k_c: int = 6
    cond_dim: int = 128
    n_ref_tokens: int = 50
    ref_blocks: int = 6
    ref_kernel: int = 5
    ref_intermediate: int = 512
    ref_heads: int = 4
    text_blocks: int = 6
    text_kernel: int = 5
    text_intermediate: int = 512
    text_attn_blocks: int = 4
    text_attn_filter: int = 512
    text_heads: int = 4
    rope_base: float = 10000.0
    vf_dim: int = 256
    vf_kernel: int = 5
    vf_intermediate: int = 1024
    vf_dilations: List[int] = field(default_factory=lambda: [1, 2, 4, 8])
    vf_standard_blocks: int = 2
    vf_main_repeats: int = 4
    vf_tail_blocks: int = 4
    vf_heads: int = 4
    time_embed_dim: int = 64
    n_null_text: int = 4
    init_std: float = 0.02


@dataclass
class FlowTrainingConfig:
    lr: float = 5e-4
    betas: List[float] = field(default_factory=lambda: [0.9, 0.999])
    weight_decay: float = 0.01
    batch_size: int = 64
    k_e: int = 4
    p_uncond: float = 0.05
    sigma_min: float = 1e-8
    halve_every: int = 300_000
    ref_crop_min_s: float = 0.2
    ref_crop_max_s: float = 9.0
    val_timesteps: List[float] = field(
        default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9]
    )


@dataclass
class DurationConfig:
    dim: int = 64
    ref_blocks: int = 4
    ref_kernel: int = 5
    ref_intermediate: int = 256
    n_queries: int = 8
    attn_dim: int = 16
    query_out: int = 8
    text_blocks: int = 6
    text_kernel: int = 5
    text_intermediate: int = 256
    attn_blocks: int = 2
    attn_filter: int = 256
    heads: int = 2
    nominal_head_width: int = 164


@dataclass
class DurationTrainingConfig:
    lr: float = 5e-4
    betas: List[float] = field(default_factory=lambda: [0.9, 0.999])
    weight_decay: float = 0.01
    batch_size: int = 128
    steps: int = 3000
    ref_span_low: float = 0.05
    ref_span_high: float = 0.95


@dataclass
class ModelConfig:
    preset: str = "full"
    mel: MelConfig = field(default_factory=MelConfig)
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    ttl: TextToLatentConfig = field(default_factory=TextToLatentConfig)
    flow: FlowTrainingConfig = field(default_factory=FlowTrainingConfig)
    duration: DurationConfig = field(default_factory=DurationConfig)
    duration_training: DurationTrainingConfig = field(
        default_factory=DurationTrainingConfig
    )

    @property
    def compressed_channels(self) -> int:
        return self.ttl.k_c * self.autoencoder.latent_dim

    @property
    def compressed_frame_rate(self) -> float:
        return self.mel.frame_rate / self.ttl.k_c

    @property
    def samples_per_compressed_frame(self) -> int:
        return self.ttl.k_c * self.mel.hop_size


def full_preset() -> ModelConfig:
    return ModelConfig(preset="full")


def toy_preset() -> ModelConfig:
    """
    Same topology as the full preset at desk scale: narrow widths, one or two blocks per stack.
    Audio parameters (44.1 kHz, hop 512) are kept so that lengths match the full preset.
    """
    return ModelConfig(
        preset="toy",
        mel=MelConfig(n_mels=16),
        autoencoder=AutoencoderConfig(
            latent_dim=4,
            width=32,
            intermediate=64,
            n_encoder_blocks=2,
            decoder_dilations=[1, 2, 1],
            head_hidden=64,
        ),
        discriminator=DiscriminatorConfig(
            mpd_channels=[4, 8, 16, 16, 16, 1],
            mrd_channels=[4, 4, 4, 4, 4, 1],
        ),
        gan=GanConfig(lr=1e-3, batch_size=4),
        ttl=TextToLatentConfig(
            k_c=2,
            cond_dim=16,
            n_ref_tokens=4,
            ref_blocks=1,
            ref_intermediate=32,
            ref_heads=2,
            text_blocks=1,
            text_intermediate=32,
            text_attn_blocks=1,
            text_attn_filter=32,
            text_heads=2,
            vf_dim=32,
            vf_intermediate=64,
            vf_dilations=[1, 2],
            vf_standard_blocks=1,
            vf_main_repeats=1,
            vf_tail_blocks=1,
            vf_heads=2,
            time_embed_dim=16,
            n_null_text=2,
        ),
        flow=FlowTrainingConfig(lr=2e-3, batch_size=8, halve_every=100_000),
        duration=DurationConfig(
            dim=16,
            ref_blocks=1,
            ref_intermediate=32,
            n_queries=4,
            attn_dim=8,
            query_out=4,
            text_blocks=1,
            text_intermediate=32,
            attn_blocks=1,
            attn_filter=32,
            heads=2,
        ),
        duration_training=DurationTrainingConfig(lr=5e-3, batch_size=16, steps=300),
    )


PRESETS = {"full": full_preset, "toy": toy_preset}


def build_config(
    preset: PresetType = "full", overrides: Union[None, Dict[str, Any], DictConfig] = None
) -> ModelConfig:
    """
    Instantiates a preset and merges nested per-field overrides into it.

    :param preset: name of the preset ("full" or "toy")
    :param overrides: nested mapping of overrides, unknown keys are rejected
    """
    if preset not in PRESETS:
        raise ValueError(f"{preset=} is not one of {list(PRESETS)}")

    base = OmegaConf.structured(PRESETS[preset]())
    if overrides is not None:
        overrides = OmegaConf.create(
            OmegaConf.to_container(overrides)
            if isinstance(overrides, DictConfig)
            else overrides
        )
        if "preset" in overrides:
            del overrides["preset"]
        base = OmegaConf.merge(base, overrides)

    # to_object re-runs the dataclass validation on the merged values
    cfg: ModelConfig = OmegaConf.to_object(base)
    cfg.preset = preset
    return cfg


def load_config(path: Optional[str] = None) -> ModelConfig:
    """
    Loads a YAML key-value config file with a mandatory ``preset`` key.
    No path means the full preset.
    """
    if path is None:
        return full_preset()

    raw = OmegaConf.load(path)
    if "preset" not in raw:
        raise ValueError(f"config file {path} has no 'preset' key")

    return build_config(raw.preset, raw)


def config_to_dict(cfg: ModelConfig) -> Dict[str, Any]:
    return dataclasses.asdict(cfg)


def config_from_dict(d: Dict[str, Any]) -> ModelConfig:
    return build_config(d.get("preset", "full"), d)


def config_fingerprint(cfg: ModelConfig) -> str:
    # hashed in merged form, where OmegaConf has coerced e.g. ints given for float fields
    payload = json.dumps(config_to_dict(config_from_dict(config_to_dict(cfg))), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def checkpoint_dir(path: Optional[str] = None) -> str:
    if path is not None:
        return path
    return os.environ.get(CHECKPOINT_DIR_ENV, "checkpoints")
