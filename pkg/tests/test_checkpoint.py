import os

import pytest
import torch

from latent_flow_tts.checkpoint import (
    CHECKPOINT_FILES,
    load_checkpoint,
    parameter_manifest,
    read_checkpoint,
    save_checkpoint,
)
from latent_flow_tts.config import build_config, config_fingerprint
from latent_flow_tts.errors import ConfigMismatchError, MissingCheckpointError
from latent_flow_tts.models.duration import DurationPredictor
from latent_flow_tts.models.text_to_latent import TextToLatent


@pytest.fixture()
def ttl_ckpt(cfg, tmp_path):
    model = TextToLatent(cfg)
    path = save_checkpoint(str(tmp_path / CHECKPOINT_FILES["ttl"]), "ttl", model, cfg)
    return path, model


def test_round_trip(cfg, ttl_ckpt):
    path, model = ttl_ckpt
    loaded, loaded_cfg = load_checkpoint(path, "ttl", expected=cfg)
    assert config_fingerprint(loaded_cfg) == config_fingerprint(cfg)
    assert not loaded.training
    for (name, a), (_, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert torch.equal(a, b), name


def test_no_temporary_file_left(ttl_ckpt):
    path, _ = ttl_ckpt
    assert not os.path.exists(f"{path}.tmp")


def test_kind_mismatch(ttl_ckpt):
    with pytest.raises(ConfigMismatchError):
        load_checkpoint(ttl_ckpt[0], "duration")


def test_config_mismatch(ttl_ckpt):
    with pytest.raises(ConfigMismatchError):
        load_checkpoint(ttl_ckpt[0], "ttl", expected=build_config("toy", {"flow": {"k_e": 1}}))


def test_missing_file(tmp_path):
    with pytest.raises(MissingCheckpointError):
        read_checkpoint(str(tmp_path / "nothing.ckpt"))


def test_parameter_manifest(cfg):
    model = DurationPredictor(cfg)
    manifest = parameter_manifest(model)
    assert [name for name, _, _ in manifest] == list(model.state_dict())
    assert all(dtype == "torch.float32" for _, _, dtype in manifest)
    assert sum(torch.Size(shape).numel() for _, shape, _ in manifest) == sum(
        p.numel() for p in model.state_dict().values()
    )
