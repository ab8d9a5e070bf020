import json
import os
from typing import List, Literal, Optional, Tuple

from jsonargparse import CLI
from pytorch_lightning.loggers import CSVLogger, Logger, WandbLogger
from pytorch_lightning.utilities import rank_zero_info

from latent_flow_tts import training
from latent_flow_tts.audio import read_wav, resample, write_wav
from latent_flow_tts.checkpoint import CHECKPOINT_FILES, STATS_FILE
from latent_flow_tts.config import checkpoint_dir, load_config, toy_preset
from latent_flow_tts.data import corpus
from latent_flow_tts.data.synthetic import synthetic_corpus
from latent_flow_tts.latent_ops import fit_stats as fit_latent_stats
from latent_flow_tts.latent_ops import load_stats, save_stats
from latent_flow_tts.pipeline import Synthesizer
from latent_flow_tts.profiler import bench_expansion as expansion_grid
from latent_flow_tts.profiler import profile_report
from latent_flow_tts.sampler import SamplerConfig

LoggerType = Literal["csv", "wandb"]


def _logger(kind: LoggerType, out_dir: str, name: str, offline: bool = True) -> Logger:
    if kind == "wandb":
        return WandbLogger(project="latent-flow-tts", name=name, save_dir=out_dir, offline=offline)
    return CSVLogger(out_dir, name=name)


def train_autoencoder(
    manifest: str,
    model_config: Optional[str] = None,
    steps: int = 1000,
    out_dir: Optional[str] = None,
    seed: int = 0,
    logger: LoggerType = "csv",
) -> str:
    """
    Trains the speech autoencoder on the audio listed in a manifest (transcripts optional).

    :param manifest: TSV manifest of audio files
    :param model_config: YAML config file with a `preset` key, the full preset by default
    :param out_dir: checkpoint directory, defaults to $LATENT_FLOW_TTS_CHECKPOINT_DIR
    :param logger: `csv` or `wandb`
    """
    cfg = load_config(model_config)
    out_dir = checkpoint_dir(out_dir)
    entries = corpus.load_manifest(manifest, require_transcripts=False).entries
    clips = [resample(read_wav(e.path), cfg.mel.sample_rate) for e in entries]
    result = training.train_autoencoder(
        clips, cfg, out_dir, steps, seed, _logger(logger, out_dir, "autoencoder")
    )
    return result.checkpoint


def cache_latents(manifest: str, out_dir: str, checkpoint: Optional[str] = None) -> str:
    """
    Encodes the manifest audio into the compressed-latent cache.

    :param checkpoint: autoencoder checkpoint, defaults to autoencoder.ckpt in the checkpoint directory
    """
    if checkpoint is None:
        checkpoint = os.path.join(checkpoint_dir(), CHECKPOINT_FILES["autoencoder"])
    result = corpus.cache_latents(corpus.load_manifest(manifest), checkpoint, out_dir)
    return result.index_path


def fit_stats(cache_dir: str, out: Optional[str] = None) -> str:
    """Fits the channel-wise latent statistics of a latent cache; written into the cache by default."""
    with open(os.path.join(cache_dir, corpus.INDEX_FILE), encoding="utf-8") as f:
        fingerprint = json.load(f)["fingerprint"]
    stats = fit_latent_stats(item.z1 for item in corpus.load_cached_corpus(cache_dir))
    out = os.path.join(cache_dir, STATS_FILE) if out is None else out
    save_stats(out, stats, fingerprint)
    return out


def _stats(cache_dir: str, stats: Optional[str], items):
    if stats is not None:
        return load_stats(stats)
    path = os.path.join(cache_dir, STATS_FILE)
    return load_stats(path) if os.path.isfile(path) else fit_latent_stats(i.z1 for i in items)


def train_ttl(
    cache_dir: str,
    model_config: Optional[str] = None,
    steps: int = 1000,
    out_dir: Optional[str] = None,
    stats: Optional[str] = None,
    seed: int = 0,
    logger: LoggerType = "csv",
) -> str:
    """
    Trains the text-to-latent module on a latent cache.

    :param stats: latent statistics file, the cache's own (or freshly fitted ones) by default
    """
    cfg = load_config(model_config)
    out_dir = checkpoint_dir(out_dir)
    items = corpus.load_cached_corpus(cache_dir)
    result = training.train_ttl(
        items, cfg, out_dir, steps, _stats(cache_dir, stats, items), seed,
        logger=_logger(logger, out_dir, "ttl"),
    )
    return result.checkpoint


def train_duration(
    cache_dir: str,
    model_config: Optional[str] = None,
    steps: Optional[int] = None,
    out_dir: Optional[str] = None,
    stats: Optional[str] = None,
    seed: int = 0,
    logger: LoggerType = "csv",
) -> str:
    """
    Trains the duration predictor on a latent cache.

    :param steps: training steps, the config's duration_training.steps by default
    """
    cfg = load_config(model_config)
    out_dir = checkpoint_dir(out_dir)
    items = corpus.load_cached_corpus(cache_dir)
    steps = cfg.duration_training.steps if steps is None else steps
    result = training.train_duration(
        items, cfg, out_dir, steps, _stats(cache_dir, stats, items), seed,
        logger=_logger(logger, out_dir, "duration"),
    )
    return result.checkpoint


def synthesize(
    text: str,
    ref: str,
    out: str,
    nfe: int = 32,
    cfg: float = 3.0,
    seed: int = 0,
    duration_frames: Optional[int] = None,
    checkpoints: Optional[str] = None,
) -> str:
    """
    Zero-shot synthesis of `text` in the voice of the reference WAV.

    :param nfe: number of Euler steps
    :param cfg: classifier-free guidance scale
    :param duration_frames: output length in compressed frames, predicted by default
    :param checkpoints: checkpoint directory, defaults to $LATENT_FLOW_TTS_CHECKPOINT_DIR
    """
    synthesizer = Synthesizer.from_checkpoint_dir(checkpoints)
    audio = synthesizer.synthesize(
        text, read_wav(ref), SamplerConfig(nfe=nfe, cfg_scale=cfg, seed=seed), duration_frames
    )
    write_wav(out, audio)
    rank_zero_info(f"wrote {audio.duration:.2f} s to {out}")
    return out


def profile(
    model_config: Optional[str] = None,
    batch_size: int = 16,
    k_e: List[int] = [1, 2, 4],
    flops_per_mac: int = 2,
    timing_trials: int = 0,
    out: Optional[str] = None,
) -> str:
    """
    Parameter counts and training FLOPs at the 15 s / 250 characters / 3 s reference workload, as JSON.

    :param flops_per_mac: 2, or 1 to count multiply-accumulates
    :param timing_trials: trials of the decoder timing, 0 skips it
    """
    cfg = load_config(model_config)
    report = json.dumps(
        profile_report(cfg, batch_size, k_e, None, flops_per_mac, timing_trials).to_dict(), indent=2
    )
    if out is not None:
        with open(out, "w") as f:
            f.write(report)
    return report


def bench_expansion(
    model_config: Optional[str] = None,
    batch_sizes: List[int] = [16, 32, 64],
    k_e: List[int] = [1, 2, 4],
    flops_per_mac: int = 2,
    timing_trials: int = 0,
    out: str = "bench_expansion.csv",
) -> str:
    """
    CSV grid over (batch size, K_e) of training-step GFLOPs, activation memory and iteration time.

    :param timing_trials: timed training steps per grid point, 0 skips timing
    """
    cfg = load_config(model_config)
    expansion_grid(cfg, batch_sizes, k_e, None, flops_per_mac, timing_trials).to_csv(out, index=False)
    return out


def bench_convergence(
    model_config: Optional[str] = None,
    n_train: int = 512,
    n_val: int = 32,
    runs: List[Tuple[int, int]] = [(16, 1), (16, 4)],
    steps: int = 2000,
    eval_every: int = 100,
    out_dir: str = "convergence",
    seed: int = 0,
) -> str:
    """
    Validation-loss curves of text-to-latent runs with different (batch size, K_e) on the
    synthetic corpus, written to curves.csv in `out_dir`.

    :param model_config: YAML config file, the toy preset by default
    """
    cfg = toy_preset() if model_config is None else load_config(model_config)
    train_items = synthetic_corpus(n_train, seed=seed, cfg=cfg)
    val_items = synthetic_corpus(n_val, seed=seed + 1000, cfg=cfg, teacher_seed=seed)
    curves = training.convergence_benchmark(
        train_items, val_items, cfg, runs, steps, eval_every, out_dir, seed
    )
    out = os.path.join(out_dir, "curves.csv")
    curves.to_csv(out, index=False)
    return out


COMMANDS = {
    "train-autoencoder": train_autoencoder,
    "train-ttl": train_ttl,
    "train-duration": train_duration,
    "synthesize": synthesize,
    "profile": profile,
    "bench-expansion": bench_expansion,
    "bench-convergence": bench_convergence,
    "cache-latents": cache_latents,
    "fit-stats": fit_stats,
}


def main(args: Optional[List[str]] = None):
    return CLI(COMMANDS, args=args, as_positional=False)


if __name__ == "__main__":
    print(main())
