import math
import os

import hydra.core.global_hydra
import pytest
import torch
from hydra import compose, initialize
from pytorch_lightning import seed_everything

from latent_flow_tts.audio import AudioWaveform
from latent_flow_tts.config import build_config, full_preset
from latent_flow_tts.data.synthetic import synthetic_corpus

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def compose_config(config_name: str, overrides=()):
    hydra.core.global_hydra.GlobalHydra.instance().clear()
    initialize(config_path="../configs", job_name="test_app", version_base=None)
    raw = compose(config_name=config_name, overrides=list(overrides))
    return build_config(raw.preset, raw)


@pytest.fixture()
def cfg():
    seed_everything(42)
    return compose_config("toy")


@pytest.fixture(scope="session")
def full_cfg():
    return full_preset()


def sine(freq: float, seconds: float, sample_rate: int = 44100, amplitude: float = 0.5) -> AudioWaveform:
    n = int(round(seconds * sample_rate))
    t = torch.arange(n, dtype=torch.float64) / sample_rate
    return AudioWaveform(
        samples=(amplitude * torch.sin(2 * math.pi * freq * t)).float(), sample_rate=sample_rate
    )


@pytest.fixture()
def tone():
    return sine(440.0, 1.0)


@pytest.fixture()
def toy_items(cfg):
    return synthetic_corpus(16, seed=0, cfg=cfg)
