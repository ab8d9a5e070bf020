"""
Parameter, FLOP, activation-memory and wall-clock accounting.

FLOPs are counted by running the forward pass on the ``meta`` device with forward hooks on the
leaf layers, so no real compute or memory is needed even for the full preset. Per layer:

- convolution: ``out.numel() * C_in / groups * prod(kernel)`` multiply-accumulates (MACs),
  plus one FLOP per output element for the bias
- linear: ``out.numel() * in_features`` MACs, plus the bias
- attention core: ``B * H * L_q * L_k * (d_k + d_v)`` MACs for the score and value products,
  plus one FLOP per score for the softmax
- normalizations and activations: one FLOP per output element
- embeddings, dropout and identities: free

A MAC is worth `flops_per_mac` FLOPs (2 by default). Functional tensor arithmetic outside these
layers (residual additions, masking, rotary embeddings) is not counted.
"""
import copy
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.stats
import torch
from torch import nn

from latent_flow_tts.audio import AudioWaveform
from latent_flow_tts.config import ModelConfig
from latent_flow_tts.errors import BenchmarkError
from latent_flow_tts.models.attention import DotProductAttention, RotaryEmbedding

META = torch.device("meta")


def count_params(module: nn.Module, trainable_only: bool = True) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


def count_params_by_child(module: nn.Module) -> Dict[str, int]:
    """Trainable parameters per direct child; parameters held by `module` itself are listed under ``""``."""
    counts = {name: count_params(child) for name, child in module.named_children()}
    direct = sum(p.numel() for p in module.parameters(recurse=False) if p.requires_grad)
    if direct:
        counts[""] = direct
    return counts


@dataclass
class FlopCount:
    macs: int = 0
    other_flops: int = 0
    activation_bytes: int = 0
    flops_per_mac: int = 2
    by_module: Dict[str, int] = field(default_factory=dict)

    @property
    def flops(self) -> int:
        return self.flops_per_mac * self.macs + self.other_flops

    @property
    def gflops(self) -> float:
        return self.flops / 1e9

    def add(self, name: str, macs: int, other: int, out: torch.Tensor):
        self.macs += macs
        self.other_flops += other
        self.activation_bytes += out.numel() * out.element_size()
        self.by_module[name] = self.by_module.get(name, 0) + self.flops_per_mac * macs + other


def _conv(m: nn.Module, inputs, out: torch.Tensor):
    macs = out.numel() * (m.in_channels // m.groups) * math.prod(m.kernel_size)
    return macs, out.numel() if m.bias is not None else 0


def _linear(m: nn.Linear, inputs, out: torch.Tensor):
    return out.numel() * m.in_features, out.numel() if m.bias is not None else 0


def _attention(m: DotProductAttention, inputs, out: torch.Tensor):
    q, k, v = inputs[:3]
    scores = q.shape[:-1].numel() * k.shape[-2]
    return scores * (q.shape[-1] + v.shape[-1]), scores


def _elementwise(m: nn.Module, inputs, out: torch.Tensor):
    return 0, out.numel()


def _free(m: nn.Module, inputs, out: torch.Tensor):
    return 0, 0


LAYER_FLOPS: Dict[type, Callable] = {
    nn.Conv1d: _conv,
    nn.Conv2d: _conv,
    nn.Linear: _linear,
    DotProductAttention: _attention,
    nn.LayerNorm: _elementwise,
    nn.BatchNorm1d: _elementwise,
    nn.BatchNorm2d: _elementwise,
    nn.PReLU: _elementwise,
    nn.GELU: _elementwise,
    nn.LeakyReLU: _elementwise,
    nn.Embedding: _free,
    nn.Dropout: _free,
    nn.Identity: _free,
    RotaryEmbedding: _free,
}


def _formula(module: nn.Module) -> Optional[Callable]:
    for kind, formula in LAYER_FLOPS.items():
        if isinstance(module, kind):
            return formula
    return None


def _counted_layers(module: nn.Module, prefix: str = ""):
    """Yields (name, layer, formula) for every counted layer; an uncounted leaf is an error."""
    formula = _formula(module)
    if formula is not None:
        yield prefix, module, formula
        return

    children = list(module.named_children())
    if not children:
        raise ValueError(f"no FLOP formula for layer {prefix or '<root>'} of type {type(module).__name__}")
    for name, child in children:
        yield from _counted_layers(child, f"{prefix}.{name}" if prefix else name)


@contextmanager
def flop_hooks(module: nn.Module, flops_per_mac: int = 2):
    """Counts the FLOPs of every forward pass run inside the context."""
    count = FlopCount(flops_per_mac=flops_per_mac)
    handles = []
    for name, layer, formula in _counted_layers(module):

        def hook(m, inputs, out, name=name, formula=formula):
            macs, other = formula(m, inputs, out)
            count.add(name, macs, other, out)

        handles.append(layer.register_forward_hook(hook))
    try:
        yield count
    finally:
        for handle in handles:
            handle.remove()


def to_meta(module: nn.Module) -> nn.Module:
    """Structure-preserving copy of `module` whose tensors live on the meta device."""
    if all(p.is_meta for p in module.parameters()):
        return module.eval()
    return copy.deepcopy(module).to(META).eval()


def _meta_args(args):
    return [a.to(META) if isinstance(a, torch.Tensor) else a for a in args]


def count_flops(
    module: nn.Module,
    *inputs,
    flops_per_mac: int = 2,
    method: str = "forward",
    **kwargs,
) -> FlopCount:
    """
    FLOPs of one call of `module.<method>(*inputs, **kwargs)`, evaluated on the meta device.

    :param flops_per_mac: FLOPs per multiply-accumulate (2, or 1 for the MAC-counting convention)
    """
    meta = to_meta(module)
    kwargs = dict(zip(kwargs, _meta_args(kwargs.values())))
    # forward goes through __call__ so hooks on a bare root layer fire
    call = meta if method == "forward" else getattr(meta, method)
    with flop_hooks(meta, flops_per_mac) as count, torch.no_grad():
        call(*_meta_args(inputs), **kwargs)
    return count


@dataclass
class Workload:
    """Training workload in seconds of speech, characters and seconds of reference."""

    speech_s: float = 15.0
    n_chars: int = 250
    ref_s: float = 3.0


def compressed_frames(seconds: float, cfg: ModelConfig) -> int:
    mel_frames = math.floor(seconds * cfg.mel.sample_rate) // cfg.mel.hop_size + 1
    return math.ceil(mel_frames / cfg.ttl.k_c)


@dataclass
class TtlFlops:
    encoders: FlopCount
    denoiser: FlopCount

    @property
    def flops(self) -> int:
        return self.encoders.flops + self.denoiser.flops

    @property
    def gflops(self) -> float:
        return self.flops / 1e9

    @property
    def activation_bytes(self) -> int:
        return self.encoders.activation_bytes + self.denoiser.activation_bytes


def ttl_step_flops(
    model: nn.Module,
    batch_size: int,
    k_e: int,
    latent_frames: int,
    n_chars: int,
    ref_frames: int,
    flops_per_mac: int = 2,
) -> TtlFlops:
    """
    Forward FLOPs of one expanded text-to-latent training step: conditions encoded for
    `batch_size` items, the vector field evaluated on `batch_size * k_e` noisy latents.
    """
    meta = to_meta(model)
    channels = meta.cfg.compressed_channels
    n = batch_size * k_e

    with torch.no_grad():
        with flop_hooks(meta, flops_per_mac) as encoders:
            conditions = meta.encode_conditions(
                torch.zeros(batch_size, n_chars, dtype=torch.long, device=META),
                torch.ones(batch_size, n_chars, dtype=torch.bool, device=META),
                torch.empty(batch_size, channels, ref_frames, device=META),
            )
        index = torch.arange(batch_size, device=META).repeat_interleave(k_e)
        with flop_hooks(meta, flops_per_mac) as denoiser:
            meta.estimate_vector_field(
                torch.empty(n, channels, latent_frames, device=META),
                torch.empty(n, device=META),
                conditions.index_select(index),
            )
    return TtlFlops(encoders=encoders, denoiser=denoiser)


def ttl_training_flops(
    cfg: ModelConfig,
    batch_size: int = 16,
    k_e: int = 1,
    workload: Optional[Workload] = None,
    flops_per_mac: int = 2,
    model: Optional[nn.Module] = None,
) -> TtlFlops:
    from latent_flow_tts.models.text_to_latent import TextToLatent

    workload = Workload() if workload is None else workload
    if model is None:
        with META:
            model = TextToLatent(cfg)
    return ttl_step_flops(
        model,
        batch_size,
        k_e,
        compressed_frames(workload.speech_s, cfg),
        workload.n_chars,
        compressed_frames(workload.ref_s, cfg),
        flops_per_mac,
    )


@dataclass
class TimingStats:
    mean: float
    ci95: float
    trials: int
    times: List[float] = field(default_factory=list, repr=False)

    @property
    def low(self) -> float:
        return self.mean - self.ci95

    @property
    def high(self) -> float:
        return self.mean + self.ci95

    def overlaps(self, other: "TimingStats") -> bool:
        return self.low <= other.high and other.low <= self.high


def benchmark(fn: Callable[[], object], trials: int = 100, warmup: int = 3) -> TimingStats:
    """
    Wall-clock seconds of `fn()`: mean and the half-width of the 95% Student-t confidence
    interval over `trials` timed runs after `warmup` untimed ones.
    """
    if trials < 2:
        raise ValueError(f"{trials=} should be at least 2")

    times = []
    for trial in range(-warmup, trials):
        start = time.perf_counter()
        try:
            fn()
        except Exception as e:
            raise BenchmarkError(trial, e) from e
        if trial >= 0:
            times.append(time.perf_counter() - start)

    values = np.asarray(times)
    sem = values.std(ddof=1) / math.sqrt(trials)
    return TimingStats(
        mean=float(values.mean()),
        ci95=float(scipy.stats.t.ppf(0.975, trials - 1) * sem),
        trials=trials,
        times=times,
    )


def real_time_factor(seconds: float, audio) -> float:
    duration = audio.duration if isinstance(audio, AudioWaveform) else float(audio)
    if duration <= 0:
        raise ValueError(f"{duration=} should be positive")
    return seconds / duration


def _models(cfg: ModelConfig, device=META) -> Dict[str, nn.Module]:
    from latent_flow_tts.models.autoencoder import SpeechAutoencoder
    from latent_flow_tts.models.duration import DurationPredictor
    from latent_flow_tts.models.text_to_latent import TextToLatent

    with torch.device(device):
        return {
            "autoencoder": SpeechAutoencoder(cfg),
            "ttl": TextToLatent(cfg),
            "duration": DurationPredictor(cfg),
        }


def parameter_report(cfg: ModelConfig, models: Optional[Dict[str, nn.Module]] = None) -> Dict[str, int]:
    """Parameter counts of the inference stack (text-to-latent, decoder, duration predictor)."""
    models = _models(cfg) if models is None else models
    report = {
        "encoder": count_params(models["autoencoder"].encoder),
        "decoder": count_params(models["autoencoder"].decoder),
        "ttl": count_params(models["ttl"]),
        "duration": count_params(models["duration"]),
    }
    for name, n in count_params_by_child(models["ttl"]).items():
        report[f"ttl.{name or 'embeddings'}"] = n
    report["all"] = report["ttl"] + report["decoder"] + report["duration"]
    return report


def time_training_step(
    cfg: ModelConfig,
    batch_size: int,
    k_e: int,
    workload: Optional[Workload] = None,
    trials: int = 10,
    warmup: int = 2,
    seed: int = 0,
) -> TimingStats:
    """Wall time of forward and backward of one expanded training step on random data."""
    from latent_flow_tts.data.batches import ReferenceCrop, TrainingBatch
    from latent_flow_tts.losses.flow_matching import expand_batch, expanded_loss
    from latent_flow_tts.models.text_to_latent import TextToLatent

    workload = Workload() if workload is None else workload
    g = torch.Generator().manual_seed(seed)
    model = TextToLatent(cfg)
    frames = compressed_frames(workload.speech_s, cfg)
    ref_frames = min(compressed_frames(workload.ref_s, cfg), frames // 2)
    batch = TrainingBatch(
        z1=torch.randn(batch_size, cfg.compressed_channels, frames, generator=g),
        lengths=torch.full((batch_size,), frames),
        char_ids=torch.randint(2, 64, (batch_size, workload.n_chars), generator=g),
        char_mask=torch.ones(batch_size, workload.n_chars, dtype=torch.bool),
        crops=[ReferenceCrop(0, ref_frames)] * batch_size,
    )

    def step():
        model.zero_grad()
        eb = expand_batch(model, batch, k_e, cfg.flow.sigma_min, cfg.flow.p_uncond, generator=g)
        expanded_loss(model, eb).total_loss.backward()

    return benchmark(step, trials, warmup)


def bench_expansion(
    cfg: ModelConfig,
    batch_sizes: Sequence[int] = (16, 32, 64),
    k_e_values: Sequence[int] = (1, 2, 4),
    workload: Optional[Workload] = None,
    flops_per_mac: int = 2,
    timing_trials: int = 0,
) -> pd.DataFrame:
    """
    Grid over (batch size, K_e): analytic GFLOPs, activation GiB and, with `timing_trials` > 0,
    the measured seconds per training iteration.
    """
    from latent_flow_tts.models.text_to_latent import TextToLatent

    with META:
        model = TextToLatent(cfg)

    rows = []
    for batch_size in batch_sizes:
        for k_e in k_e_values:
            flops = ttl_training_flops(cfg, batch_size, k_e, workload, flops_per_mac, model)
            row = dict(
                batch_size=batch_size,
                k_e=k_e,
                gflops=flops.gflops,
                encoder_gflops=flops.encoders.gflops,
                denoiser_gflops=flops.denoiser.gflops,
                activation_gib=flops.activation_bytes / 2**30,
                iter_s=float("nan"),
                iter_ci95_s=float("nan"),
            )
            if timing_trials > 0:
                stats = time_training_step(cfg, batch_size, k_e, workload, timing_trials)
                row.update(iter_s=stats.mean, iter_ci95_s=stats.ci95)
            rows.append(row)
    return pd.DataFrame(rows)


@dataclass
class ProfileReport:
    preset: str
    params: Dict[str, int]
    workload: Workload
    batch_size: int
    flops_per_mac: int
    # K_e -> GFLOPs of one training step
    gflops: Dict[int, float]
    encoder_gflops: float
    denoiser_gflops: float
    activation_bytes: Dict[int, int]
    decoder_gflops_per_second: float
    timings: Dict[str, TimingStats] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def profile_report(
    cfg: ModelConfig,
    batch_size: int = 16,
    k_e_values: Sequence[int] = (1, 2, 4),
    workload: Optional[Workload] = None,
    flops_per_mac: int = 2,
    timing_trials: int = 0,
) -> ProfileReport:
    """
    Parameter counts and training-step FLOPs at the workload; with `timing_trials` > 0 also the
    offline decode time of one second of latents (and its real-time factor) on real weights.
    """
    workload = Workload() if workload is None else workload
    models = _models(cfg)

    gflops, activation = {}, {}
    per_part = None
    for k_e in k_e_values:
        flops = ttl_training_flops(cfg, batch_size, k_e, workload, flops_per_mac, models["ttl"])
        gflops[k_e] = flops.gflops
        activation[k_e] = flops.activation_bytes
        if per_part is None:
            per_part = flops

    frames_per_second = math.ceil(cfg.mel.frame_rate)
    decoder = count_flops(
        models["autoencoder"].decoder,
        torch.empty(1, cfg.autoencoder.latent_dim, frames_per_second),
        flops_per_mac=flops_per_mac,
    )

    timings = {}
    if timing_trials > 0:
        from latent_flow_tts.models.autoencoder import SpeechAutoencoder

        autoencoder = SpeechAutoencoder(cfg).eval()
        z = torch.randn(1, cfg.autoencoder.latent_dim, frames_per_second)
        with torch.no_grad():
            stats = benchmark(lambda: autoencoder.decoder(z), timing_trials)
        timings["decode_1s"] = stats
        timings["decode_rtf"] = TimingStats(
            mean=real_time_factor(stats.mean, frames_per_second / cfg.mel.frame_rate),
            ci95=real_time_factor(stats.ci95, frames_per_second / cfg.mel.frame_rate),
            trials=stats.trials,
        )

    return ProfileReport(
        preset=cfg.preset,
        params=parameter_report(cfg, models),
        workload=workload,
        batch_size=batch_size,
        flops_per_mac=flops_per_mac,
        gflops=gflops,
        encoder_gflops=per_part.encoders.gflops,
        denoiser_gflops=per_part.denoiser.gflops / k_e_values[0],
        activation_bytes=activation,
        decoder_gflops_per_second=decoder.gflops,
        timings=timings,
    )
