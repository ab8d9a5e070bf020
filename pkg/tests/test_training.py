import os

import pytest
import torch
from pytorch_lightning import seed_everything

from conftest import sine
from latent_flow_tts.checkpoint import STATS_FILE, load_checkpoint
from latent_flow_tts.config import config_to_dict
from latent_flow_tts.data.batches import collate_items
from latent_flow_tts.data.synthetic import synthetic_corpus
from latent_flow_tts.latent_ops import fit_stats, load_stats
from latent_flow_tts.metrics.metric_logger import read_metrics
from latent_flow_tts.runner import AutoencoderModule, TextToLatentModule
from latent_flow_tts.training import (
    convergence_benchmark,
    steps_to_reach,
    train_autoencoder,
    train_duration,
    train_ttl,
)


@pytest.fixture()
def clips():
    return [sine(220.0, 1.0), sine(550.0, 0.5)]


@pytest.fixture()
def stats(toy_items):
    return fit_stats(item.z1 for item in toy_items)


def test_zero_steps_saves_initialization(cfg, clips, tmp_path):
    result = train_autoencoder(clips, cfg, str(tmp_path), steps=0, seed=0)
    loaded, _ = load_checkpoint(result.checkpoint, "autoencoder")

    seed_everything(0, workers=True)
    fresh = AutoencoderModule(config_to_dict(cfg)).autoencoder
    for name, value in fresh.state_dict().items():
        assert torch.equal(loaded.state_dict()[name], value), name
    assert len(read_metrics(result.metrics)) == 0


def test_autoencoder_steps(cfg, clips, tmp_path):
    result = train_autoencoder(clips, cfg, str(tmp_path), steps=2, seed=0)
    metrics = read_metrics(result.metrics)
    assert list(metrics.columns) == ["step", "l_recon", "l_adv_g", "l_fm", "l_d", "wall_ms"]
    assert metrics.step.tolist() == [1, 2]
    assert metrics.drop(columns="step").notna().all().all()


def test_ttl_steps_with_validation(cfg, toy_items, stats, tmp_path):
    result = train_ttl(
        toy_items[:12], cfg, str(tmp_path), steps=3, stats=stats, val_items=toy_items[12:], eval_every=2
    )
    metrics = read_metrics(result.metrics)
    assert list(metrics.columns) == ["step", "loss", "lr", "wall_ms", "flops_step"]
    assert len(metrics) == 3
    assert (metrics.flops_step > 0).all()
    assert (metrics.lr == cfg.flow.lr).all()

    assert [step for step, _ in result.module.val_history] == [0, 2]
    assert os.path.isfile(os.path.join(str(tmp_path), STATS_FILE))
    assert torch.equal(load_stats(os.path.join(str(tmp_path), STATS_FILE)).mean, stats.mean)
    load_checkpoint(result.checkpoint, "ttl", expected=cfg)


def test_ttl_is_deterministic(cfg, toy_items, stats, tmp_path):
    a = train_ttl(toy_items, cfg, str(tmp_path / "a"), steps=2, stats=stats, seed=1)
    b = train_ttl(toy_items, cfg, str(tmp_path / "b"), steps=2, stats=stats, seed=1)
    assert read_metrics(a.metrics).loss.tolist() == read_metrics(b.metrics).loss.tolist()


def test_ttl_requires_stats(cfg, toy_items, tmp_path):
    with pytest.raises(ValueError):
        train_ttl(toy_items, cfg, str(tmp_path), steps=1, stats=None)


def test_empty_corpora(cfg, stats, tmp_path):
    with pytest.raises(ValueError):
        train_ttl([], cfg, str(tmp_path), steps=1, stats=stats)
    with pytest.raises(ValueError):
        train_duration([], cfg, str(tmp_path), steps=1)
    with pytest.raises(ValueError):
        train_autoencoder([], cfg, str(tmp_path), steps=1)


def test_items_too_short_for_a_reference(cfg, tmp_path):
    # at most 15 frames, a reference needs at least 9 frames in one half
    items = synthetic_corpus(4, seed=0, cfg=cfg, min_chars=3, max_chars=5)
    with pytest.warns(UserWarning), pytest.raises(ValueError):
        train_ttl(items, cfg, str(tmp_path), steps=1, stats=fit_stats(i.z1 for i in items))


def test_duration_steps(cfg, toy_items, stats, tmp_path):
    result = train_duration(toy_items, cfg, str(tmp_path), steps=2, stats=stats)
    metrics = read_metrics(result.metrics)
    assert list(metrics.columns) == ["step", "loss", "lr", "wall_ms"]
    assert len(metrics) == 2
    load_checkpoint(result.checkpoint, "duration", expected=cfg)


def test_validation_loss_decreases(cfg, tmp_path):
    train = synthetic_corpus(64, seed=0, cfg=cfg)
    val = synthetic_corpus(8, seed=1000, cfg=cfg, teacher_seed=0)
    result = train_ttl(
        train, cfg, str(tmp_path), steps=100, stats=fit_stats(i.z1 for i in train),
        val_items=val, eval_every=50,
    )
    history = result.module.val_history
    assert [step for step, _ in history] == [0, 50, 100]
    assert history[-1][1] < history[0][1]


def test_convergence_benchmark(cfg, toy_items, tmp_path):
    curves = convergence_benchmark(
        toy_items[:12], toy_items[12:], cfg, runs=((2, 1), (2, 2)), steps=2, eval_every=1,
        out_dir=str(tmp_path),
    )
    assert list(curves.columns) == ["batch_size", "k_e", "step", "val_loss", "mean_iter_ms"]
    for _, run in curves.groupby("k_e"):
        assert run.step.tolist() == [0, 1, 2]
    assert os.path.isdir(os.path.join(str(tmp_path), "b2_k2"))
    assert steps_to_reach(curves, float("inf")) == 0
    assert steps_to_reach(curves, -1.0) is None


def test_step_flops_keeps_the_module_movable(cfg, toy_items):
    module = TextToLatentModule(config_to_dict(cfg))
    batch = collate_items(toy_items[:2], cfg, generator=torch.Generator().manual_seed(0))
    assert module.step_flops(batch) > 0
    assert not any(t.is_meta for t in module.state_dict().values())
    module.cpu()


def test_autoencoder_reconstruction_improves(cfg, tmp_path):
    result = train_autoencoder([sine(220.0, 1.0)], cfg, str(tmp_path), steps=200, seed=0)
    metrics = read_metrics(result.metrics)
    assert metrics.drop(columns="step").notna().all().all()
    assert metrics.l_recon.tail(10).mean() <= 0.5 * metrics.l_recon.head(5).mean()
