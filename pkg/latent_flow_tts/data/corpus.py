"""
Corpus ingestion and the latent cache.

Manifest: UTF-8 text, one ``path<TAB>transcript[<TAB>duration_seconds]`` entry per line; blank
lines and lines starting with ``#`` are skipped, relative paths are resolved against the
manifest's directory.

Latent record (``.lftl``): little-endian header ``magic "LFTL", uint16 version, uint16 k_c,
uint32 channels, uint32 frames, uint32 pad_frames`` followed by channels * frames float32 values
in row-major order. The cache directory holds one record per utterance and ``index.json``.
"""
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import scipy.io.wavfile
import torch
from pytorch_lightning.utilities import rank_zero_info

from latent_flow_tts.audio import extract_logmel, read_wav, resample
from latent_flow_tts.checkpoint import load_checkpoint
from latent_flow_tts.config import ModelConfig, config_fingerprint
from latent_flow_tts.data.batches import TrainingItem
from latent_flow_tts.errors import ConfigMismatchError, ManifestFormatError
from latent_flow_tts.latent_ops import CompressedLatent, compress
from latent_flow_tts.text import tokenize

RECORD_MAGIC = b"LFTL"
RECORD_VERSION = 1
RECORD_HEADER = struct.Struct("<4sHHIII")
INDEX_FILE = "index.json"


@dataclass
class ManifestEntry:
    path: str
    transcript: str
    duration_s: float


@dataclass
class CorpusManifest:
    entries: List[ManifestEntry]
    dataset_id: str
    split: str = "train"

    def __len__(self) -> int:
        return len(self.entries)


def wav_duration(path: str) -> float:
    sample_rate, data = scipy.io.wavfile.read(path, mmap=True)
    return data.shape[0] / sample_rate


def load_manifest(
    path: str,
    dataset_id: Optional[str] = None,
    split: str = "train",
    require_transcripts: bool = True,
) -> CorpusManifest:
    """
    :param require_transcripts: reject entries without a transcript (text-to-speech splits)
    """
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue

            fields = line.split("\t")
            if len(fields) > 3:
                raise ManifestFormatError(line_number, f"expected at most 3 fields, got {len(fields)}")
            if not fields[0]:
                raise ManifestFormatError(line_number, "empty audio path")
            transcript = fields[1].strip() if len(fields) > 1 else ""
            if require_transcripts and not transcript:
                raise ManifestFormatError(line_number, "missing transcript")

            audio_path = fields[0] if os.path.isabs(fields[0]) else os.path.join(root, fields[0])
            if not os.path.isfile(audio_path):
                raise ManifestFormatError(line_number, f"audio file {audio_path} does not exist")

            if len(fields) == 3:
                try:
                    duration = float(fields[2])
                except ValueError:
                    raise ManifestFormatError(line_number, f"invalid duration {fields[2]!r}") from None
            else:
                duration = wav_duration(audio_path)

            entries.append(ManifestEntry(path=audio_path, transcript=transcript, duration_s=duration))

    dataset_id = os.path.splitext(os.path.basename(path))[0] if dataset_id is None else dataset_id
    return CorpusManifest(entries=entries, dataset_id=dataset_id, split=split)


def _atomic_write(path: str, data: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def encode_latent_record(cl: CompressedLatent) -> bytes:
    values = cl.values.detach().cpu().numpy().astype("<f4")
    header = RECORD_HEADER.pack(
        RECORD_MAGIC, RECORD_VERSION, cl.k_c, values.shape[0], values.shape[1], cl.pad_frames
    )
    return header + np.ascontiguousarray(values).tobytes()


def decode_latent_record(data: bytes) -> CompressedLatent:
    magic, version, k_c, channels, frames, pad_frames = RECORD_HEADER.unpack_from(data)
    if magic != RECORD_MAGIC:
        raise ValueError(f"not a latent record (magic {magic!r})")
    if version != RECORD_VERSION:
        raise ValueError(f"latent record version {version}, expected {RECORD_VERSION}")
    if len(data) != RECORD_HEADER.size + 4 * channels * frames:
        raise ValueError(f"latent record of {len(data)} bytes does not hold {channels}x{frames} values")

    values = np.frombuffer(data, dtype="<f4", offset=RECORD_HEADER.size).reshape(channels, frames)
    return CompressedLatent(
        values=torch.from_numpy(values.astype(np.float32)), k_c=k_c, pad_frames=pad_frames
    )


def write_latent_record(path: str, cl: CompressedLatent):
    _atomic_write(path, encode_latent_record(cl))


def read_latent_record(path: str) -> CompressedLatent:
    with open(path, "rb") as f:
        return decode_latent_record(f.read())


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class CacheResult:
    index_path: str
    written: int
    skipped: int
    entries: List[Dict] = field(default_factory=list)


def _read_index(path: str) -> Dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


@torch.no_grad()
def cache_latents(
    manifest: CorpusManifest,
    checkpoint_path: str,
    out_dir: str,
    expected: Optional[ModelConfig] = None,
) -> CacheResult:
    """
    Encodes every manifest entry with the autoencoder checkpoint and stores its compressed
    latent. Entries whose record already exists with the indexed audio and record hashes are skipped.
    """
    autoencoder, cfg = load_checkpoint(checkpoint_path, "autoencoder", expected)
    fingerprint = config_fingerprint(cfg)
    os.makedirs(out_dir, exist_ok=True)
    index_path = os.path.join(out_dir, INDEX_FILE)

    known = {}
    if os.path.isfile(index_path):
        index = _read_index(index_path)
        if index["fingerprint"] != fingerprint:
            raise ConfigMismatchError(f"cache {out_dir} was built under another config")
        known = {e["audio_sha256"]: e for e in index["entries"]}

    entries, written, skipped = [], 0, 0
    for entry in manifest.entries:
        audio_sha = sha256_file(entry.path)
        record = f"{audio_sha[:24]}.lftl"
        record_path = os.path.join(out_dir, record)

        cached = known.get(audio_sha)
        if (
            cached is not None
            and os.path.isfile(record_path)
            and sha256_file(record_path) == cached["record_sha256"]
        ):
            entries.append({**cached, "path": entry.path, "transcript": entry.transcript})
            skipped += 1
            continue

        audio = resample(read_wav(entry.path), cfg.mel.sample_rate)
        latent = autoencoder.encode(extract_logmel(audio, cfg.mel))
        cl = compress(latent, cfg.ttl.k_c)
        write_latent_record(record_path, cl)
        written += 1

        entries.append(
            dict(
                path=entry.path,
                transcript=entry.transcript,
                audio_sha256=audio_sha,
                record=record,
                record_sha256=sha256_file(record_path),
                frames=cl.n_frames,
            )
        )

    index = dict(
        fingerprint=fingerprint,
        dataset_id=manifest.dataset_id,
        split=manifest.split,
        k_c=cfg.ttl.k_c,
        channels=cfg.compressed_channels,
        entries=entries,
    )
    _atomic_write(index_path, json.dumps(index, indent=2).encode("utf-8"))
    rank_zero_info(f"latent cache {out_dir}: {written} written, {skipped} up to date")
    return CacheResult(index_path=index_path, written=written, skipped=skipped, entries=entries)


def load_cached_corpus(cache_dir: str, fingerprint: Optional[str] = None) -> List[TrainingItem]:
    """Compressed (unnormalized) latents of a cache with their tokenized transcripts, in index order."""
    index = _read_index(os.path.join(cache_dir, INDEX_FILE))
    if fingerprint is not None and index["fingerprint"] != fingerprint:
        raise ConfigMismatchError(f"cache {cache_dir} was built under another config")

    return [
        TrainingItem(
            z1=read_latent_record(os.path.join(cache_dir, e["record"])),
            chars=tokenize(e["transcript"]),
        )
        for e in index["entries"]
    ]
