"""
Procedural (text, latent) corpus for desk-scale flow-matching experiments.

A fixed random teacher maps every character bigram to a block of `frames_per_char`
latent frames and adds a per-speaker offset, so the latent length is exactly
`len(text) * frames_per_char` and the mapping is linear in one-hot bigram features.
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import torch

from latent_flow_tts.config import ModelConfig, toy_preset
from latent_flow_tts.data.batches import TrainingItem
from latent_flow_tts.latent_ops import CompressedLatent
from latent_flow_tts.text import tokenize

DEFAULT_ALPHABET = "abcdefgh "


@dataclass
class SyntheticTeacher:
    alphabet: str
    frames_per_char: int
    # (len(alphabet) + 1 previous symbols incl. start, len(alphabet), frames_per_char, C)
    blocks: torch.Tensor
    # (n_speakers, C)
    speaker_offsets: torch.Tensor

    @property
    def channels(self) -> int:
        return self.blocks.shape[-1]

    def _bigrams(self, text: str) -> List[int]:
        """Flat (previous, current) indices; the start symbol is index len(alphabet)."""
        n = len(self.alphabet)
        idx = [self.alphabet.index(ch) for ch in text]
        prev = [n] + idx[:-1]
        return [p * n + c for p, c in zip(prev, idx)]

    def render(self, text: str, speaker: int) -> torch.Tensor:
        """Noise-free latent (C, len(text) * frames_per_char)."""
        flat = self.blocks.reshape(-1, self.frames_per_char, self.channels)
        frames = flat[self._bigrams(text)].reshape(-1, self.channels)
        return (frames + self.speaker_offsets[speaker]).T.contiguous()

    def design_matrix(self, text: str, speaker: int) -> np.ndarray:
        """One-hot (bigram, frame-in-block) and speaker features, one row per latent frame."""
        n_bigram = (len(self.alphabet) + 1) * len(self.alphabet)
        n_features = n_bigram * self.frames_per_char + self.speaker_offsets.shape[0]

        rows = np.zeros((len(text) * self.frames_per_char, n_features))
        for i, bigram in enumerate(self._bigrams(text)):
            for j in range(self.frames_per_char):
                row = i * self.frames_per_char + j
                rows[row, bigram * self.frames_per_char + j] = 1.0
                rows[row, n_bigram * self.frames_per_char + speaker] = 1.0
        return rows


def make_teacher(
    channels: int,
    seed: int = 0,
    alphabet: str = DEFAULT_ALPHABET,
    frames_per_char: int = 3,
    n_speakers: int = 4,
    speaker_scale: float = 0.5,
) -> SyntheticTeacher:
    g = torch.Generator().manual_seed(seed)
    n = len(alphabet)
    return SyntheticTeacher(
        alphabet=alphabet,
        frames_per_char=frames_per_char,
        blocks=torch.randn(n + 1, n, frames_per_char, channels, generator=g),
        speaker_offsets=speaker_scale * torch.randn(n_speakers, channels, generator=g),
    )


def synthetic_corpus(
    n_items: int,
    seed: int = 0,
    cfg: Optional[ModelConfig] = None,
    frames_per_char: int = 3,
    min_chars: int = 8,
    max_chars: int = 20,
    noise: float = 0.1,
    teacher_seed: Optional[int] = None,
    alphabet: str = DEFAULT_ALPHABET,
    n_speakers: int = 4,
) -> List[TrainingItem]:
    """
    :param n_items: number of (text, latent) pairs
    :param seed: seed of texts, speakers and noise
    :param cfg: model config defining the compressed channel count and K_c (toy preset by default)
    :param teacher_seed: seed of the teacher mapping, defaults to `seed`; corpora sharing it are
        draws from the same task (e.g. train and validation splits)
    """
    cfg = toy_preset() if cfg is None else cfg
    if min_chars < 1 or max_chars < min_chars:
        raise ValueError(f"{min_chars=} and {max_chars=} should satisfy 1 <= min <= max")

    teacher = make_teacher(
        cfg.compressed_channels,
        seed if teacher_seed is None else teacher_seed,
        alphabet,
        frames_per_char,
        n_speakers,
    )

    g = torch.Generator().manual_seed(seed + 1)
    items = []
    for _ in range(n_items):
        n_chars = int(torch.randint(min_chars, max_chars + 1, (1,), generator=g))
        text = "".join(
            alphabet[i] for i in torch.randint(len(alphabet), (n_chars,), generator=g).tolist()
        )
        speaker = int(torch.randint(n_speakers, (1,), generator=g))

        z = teacher.render(text, speaker)
        z = z + noise * torch.randn(z.shape, generator=g)
        items.append(
            TrainingItem(
                z1=CompressedLatent(values=z, k_c=cfg.ttl.k_c),
                chars=tokenize(text),
                speaker=speaker,
            )
        )
    return items
