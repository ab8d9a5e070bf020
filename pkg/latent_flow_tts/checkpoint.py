"""
Versioned checkpoint container shared by the three trainable stages.

A checkpoint is a ``torch.save``-d dict with the keys ``format_version``, ``kind``
(``autoencoder`` | ``ttl`` | ``duration``), ``config`` (the full ModelConfig as a dict),
``fingerprint`` (SHA-256 of that config) and ``state_dict``. The parameter manifest
(names, shapes, dtypes) can be listed with `parameter_manifest`.
"""
import os
from typing import Dict, List, Literal, Optional, Tuple

import torch
from torch import nn

from latent_flow_tts.config import ModelConfig, config_fingerprint, config_from_dict, config_to_dict
from latent_flow_tts.errors import ConfigMismatchError, MissingCheckpointError

FORMAT_VERSION = 1

CheckpointKind = Literal["autoencoder", "ttl", "duration"]

CHECKPOINT_FILES: Dict[str, str] = {
    "autoencoder": "autoencoder.ckpt",
    "ttl": "ttl.ckpt",
    "duration": "duration.ckpt",
}
STATS_FILE = "latent_stats.json"


def save_checkpoint(path: str, kind: CheckpointKind, model: nn.Module, cfg: ModelConfig) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    payload = dict(
        format_version=FORMAT_VERSION,
        kind=kind,
        config=config_to_dict(cfg),
        fingerprint=config_fingerprint(cfg),
        state_dict={k: v.detach().cpu() for k, v in model.state_dict().items()},
    )
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def read_checkpoint(
    path: str, kind: Optional[CheckpointKind] = None
) -> Tuple[ModelConfig, Dict[str, torch.Tensor], str]:
    """:return: the stored config, state dict and config fingerprint"""
    if not os.path.isfile(path):
        raise MissingCheckpointError(f"no checkpoint at {path}")

    payload = torch.load(path, map_location="cpu")
    if payload.get("format_version") != FORMAT_VERSION:
        raise ConfigMismatchError(
            f"checkpoint {path} has format {payload.get('format_version')}, expected {FORMAT_VERSION}"
        )
    if kind is not None and payload["kind"] != kind:
        raise ConfigMismatchError(f"checkpoint {path} holds a {payload['kind']} model, not {kind}")

    cfg = config_from_dict(payload["config"])
    if config_fingerprint(cfg) != payload["fingerprint"]:
        raise ConfigMismatchError(f"config stored in {path} does not match its fingerprint")

    return cfg, payload["state_dict"], payload["fingerprint"]


def load_checkpoint(
    path: str,
    kind: CheckpointKind,
    expected: Optional[ModelConfig] = None,
) -> Tuple[nn.Module, ModelConfig]:
    """
    Rebuilds the model stored at `path`; with `expected` given, the stored config has to
    carry the same fingerprint.
    """
    from latent_flow_tts.models.autoencoder import SpeechAutoencoder
    from latent_flow_tts.models.duration import DurationPredictor
    from latent_flow_tts.models.text_to_latent import TextToLatent

    cfg, state_dict, fingerprint = read_checkpoint(path, kind)
    if expected is not None and config_fingerprint(expected) != fingerprint:
        raise ConfigMismatchError(f"checkpoint {path} was trained under another config")

    model = {"autoencoder": SpeechAutoencoder, "ttl": TextToLatent, "duration": DurationPredictor}[
        kind
    ](cfg)
    model.load_state_dict(state_dict)
    return model.eval(), cfg


def parameter_manifest(model: nn.Module) -> List[Tuple[str, Tuple[int, ...], str]]:
    return [(name, tuple(t.shape), str(t.dtype)) for name, t in model.state_dict().items()]
