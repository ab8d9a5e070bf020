import dataclasses
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import pandas as pd
import pytorch_lightning as pl
from pytorch_lightning.loggers import CSVLogger, Logger
from pytorch_lightning.utilities import rank_zero_info, rank_zero_warn

from latent_flow_tts.audio import AudioWaveform
from latent_flow_tts.checkpoint import CHECKPOINT_FILES, STATS_FILE, save_checkpoint
from latent_flow_tts.config import ModelConfig, config_fingerprint, config_to_dict
from latent_flow_tts.data.batches import TrainingItem, crop_bounds
from latent_flow_tts.data.datamodules import AutoencoderDataModule, DurationDataModule, FlowDataModule
from latent_flow_tts.errors import ReferenceTooShortError
from latent_flow_tts.latent_ops import LatentStats, fit_stats, normalize, save_stats
from latent_flow_tts.metrics.metric_logger import MetricsCsvCallback, read_metrics
from latent_flow_tts.metrics.validation import validation_loss
from latent_flow_tts.runner import AutoencoderModule, DurationModule, TextToLatentModule


@dataclass
class TrainResult:
    checkpoint: str
    metrics: str
    module: pl.LightningModule


def _trainer(
    steps: int,
    out_dir: str,
    callbacks: Sequence[pl.Callback],
    logger: Optional[Logger] = None,
    eval_every: Optional[int] = None,
) -> pl.Trainer:
    """One pass over `steps` batches of an endless iterable dataset."""
    validate = eval_every is not None
    return pl.Trainer(
        max_epochs=1,
        limit_train_batches=steps,
        limit_val_batches=1 if validate else 0,
        val_check_interval=min(eval_every, steps) if validate else None,
        check_val_every_n_epoch=None if validate else 1,
        num_sanity_val_steps=0,
        logger=CSVLogger(out_dir, name="logs") if logger is None else logger,
        callbacks=list(callbacks),
        enable_checkpointing=False,
        enable_progress_bar=False,
        enable_model_summary=False,
        deterministic="warn",
    )


def _metrics_callback(out_dir: str, kind: str, module) -> MetricsCsvCallback:
    return MetricsCsvCallback(os.path.join(out_dir, f"{kind}_metrics.csv"), module.metrics_columns)


def _normalized(items: Sequence[TrainingItem], stats: LatentStats) -> List[TrainingItem]:
    return [dataclasses.replace(item, z1=normalize(item.z1, stats)) for item in items]


def _with_reference_room(items: Sequence[TrainingItem], cfg: ModelConfig) -> List[TrainingItem]:
    """Drops items too short to hold a reference crop of at most half their length."""
    kept = []
    for item in items:
        try:
            crop_bounds(item.n_frames, cfg)
            kept.append(item)
        except ReferenceTooShortError:
            pass
    if len(kept) < len(items):
        rank_zero_warn(f"skipped {len(items) - len(kept)} items too short for a reference crop")
    if not kept:
        raise ValueError("no item is long enough for a reference crop")
    return kept


def train_autoencoder(
    clips: Sequence[AudioWaveform],
    cfg: ModelConfig,
    out_dir: str,
    steps: int,
    seed: int = 0,
    logger: Optional[Logger] = None,
) -> TrainResult:
    """
    Adversarial autoencoder training on random fixed-length crops of `clips`.
    Zero steps save the initialization.
    """
    if len(clips) == 0:
        raise ValueError("audio corpus is empty")

    pl.seed_everything(seed, workers=True)
    module = AutoencoderModule(config_to_dict(cfg))
    dm = AutoencoderDataModule(
        clips, cfg.mel.sample_rate, cfg.gan.segment_samples, cfg.gan.batch_size, seed
    )
    callback = _metrics_callback(out_dir, "autoencoder", module)
    if steps > 0:
        _trainer(steps, out_dir, [callback], logger).fit(module, dm)

    checkpoint = save_checkpoint(
        os.path.join(out_dir, CHECKPOINT_FILES["autoencoder"]), "autoencoder", module.autoencoder, cfg
    )
    return TrainResult(checkpoint=checkpoint, metrics=callback.path, module=module)


def train_ttl(
    items: Sequence[TrainingItem],
    cfg: ModelConfig,
    out_dir: str,
    steps: int,
    stats: Optional[LatentStats],
    seed: int = 0,
    val_items: Optional[Sequence[TrainingItem]] = None,
    eval_every: Optional[int] = None,
    logger: Optional[Logger] = None,
) -> TrainResult:
    """
    Text-to-latent training on compressed latents, normalized here with `stats`, which are
    saved next to the checkpoint. With `val_items` and `eval_every`, the validation loss is
    recorded before training and every `eval_every` steps in `module.val_history`.
    """
    if len(items) == 0:
        raise ValueError("training corpus is empty")
    if stats is None:
        raise ValueError("latent statistics have not been fitted, run fit_stats first")

    items = _with_reference_room(_normalized(items, stats), cfg)
    val_items = None if val_items is None else _normalized(val_items, stats)

    pl.seed_everything(seed, workers=True)
    module = TextToLatentModule(config_to_dict(cfg), val_seed=seed)
    dm = FlowDataModule(items, cfg, val_items, cfg.flow.batch_size, seed)
    callback = _metrics_callback(out_dir, "ttl", module)

    validate = val_items is not None and eval_every is not None
    if validate:
        module.val_history.append((0, validation_loss(module.model, val_items, cfg, seed).loss))
    if steps > 0:
        trainer = _trainer(steps, out_dir, [callback], logger, eval_every if validate else None)
        trainer.fit(module, dm)

    save_stats(os.path.join(out_dir, STATS_FILE), stats, config_fingerprint(cfg))
    checkpoint = save_checkpoint(os.path.join(out_dir, CHECKPOINT_FILES["ttl"]), "ttl", module.model, cfg)
    return TrainResult(checkpoint=checkpoint, metrics=callback.path, module=module)


def train_duration(
    items: Sequence[TrainingItem],
    cfg: ModelConfig,
    out_dir: str,
    steps: int,
    stats: Optional[LatentStats] = None,
    seed: int = 0,
    logger: Optional[Logger] = None,
) -> TrainResult:
    """
    Duration predictor training; the target of each item is its full length in compressed frames.

    :param stats: statistics to normalize the latents with; None if `items` are normalized already
    """
    if len(items) == 0:
        raise ValueError("duration corpus is empty")
    if stats is not None:
        items = _normalized(items, stats)

    dt = cfg.duration_training
    pl.seed_everything(seed, workers=True)
    module = DurationModule(config_to_dict(cfg))
    dm = DurationDataModule(items, dt.batch_size, seed, dt.ref_span_low, dt.ref_span_high)
    callback = _metrics_callback(out_dir, "duration", module)
    if steps > 0:
        _trainer(steps, out_dir, [callback], logger).fit(module, dm)

    checkpoint = save_checkpoint(
        os.path.join(out_dir, CHECKPOINT_FILES["duration"]), "duration", module.model, cfg
    )
    return TrainResult(checkpoint=checkpoint, metrics=callback.path, module=module)


def steps_to_reach(curve: pd.DataFrame, target: float) -> Optional[int]:
    """First evaluated step whose validation loss is at or below `target`."""
    hits = curve.loc[curve["val_loss"] <= target, "step"]
    return None if hits.empty else int(hits.iloc[0])


def convergence_benchmark(
    train_items: Sequence[TrainingItem],
    val_items: Sequence[TrainingItem],
    cfg: ModelConfig,
    runs: Sequence[Tuple[int, int]] = ((16, 1), (16, 4)),
    steps: int = 2000,
    eval_every: int = 100,
    out_dir: str = "convergence",
    seed: int = 0,
) -> pd.DataFrame:
    """
    Trains one text-to-latent model per (batch size, K_e) run on the same data and seed.

    :return: one row per evaluation with columns batch_size, k_e, step, val_loss, mean_iter_ms
    """
    stats = fit_stats(item.z1 for item in train_items)
    rows = []
    for batch_size, k_e in runs:
        run_cfg = dataclasses.replace(
            cfg, flow=dataclasses.replace(cfg.flow, batch_size=batch_size, k_e=k_e)
        )
        result = train_ttl(
            train_items,
            run_cfg,
            os.path.join(out_dir, f"b{batch_size}_k{k_e}"),
            steps,
            stats,
            seed,
            val_items,
            eval_every,
        )
        wall_ms = read_metrics(result.metrics)["wall_ms"]
        mean_iter_ms = float(wall_ms.mean()) if len(wall_ms) else float("nan")
        rank_zero_info(f"B={batch_size}, K_e={k_e}: {mean_iter_ms:.2f} ms per iteration")
        rows.extend(
            dict(batch_size=batch_size, k_e=k_e, step=step, val_loss=loss, mean_iter_ms=mean_iter_ms)
            for step, loss in result.module.val_history
        )
    return pd.DataFrame(rows)
