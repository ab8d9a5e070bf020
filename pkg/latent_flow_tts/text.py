import functools
import os
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import torch

PAD = "<pad>"
UNK = "<unk>"
REPLACEMENT_CHAR = "\ufffd"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered character set; the index of a symbol is its line number in the vocab file."""

    symbols: Tuple[str, ...]

    def __post_init__(self):
        if self.symbols[:2] != (PAD, UNK):
            raise ValueError(f"vocabulary should start with {PAD} and {UNK}")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocabulary has duplicate symbols")

    @functools.cached_property
    def index(self) -> Dict[str, int]:
        return {s: i for i, s in enumerate(self.symbols)}

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def __len__(self) -> int:
        return len(self.symbols)


def read_vocab(path: str) -> Vocabulary:
    with open(path, encoding="utf-8") as f:
        return Vocabulary(tuple(line.rstrip("\n") for line in f if line != "\n"))


VOCAB_PATH = os.path.join(os.path.dirname(__file__), "resources", "vocab.txt")


@functools.lru_cache(maxsize=1)
def default_vocab() -> Vocabulary:
    return read_vocab(VOCAB_PATH)


@dataclass
class CharacterSequence:
    ids: List[int]
    vocab: Vocabulary

    def __post_init__(self):
        if any(not 0 <= i < len(self.vocab) for i in self.ids):
            raise ValueError(f"ids out of range for a vocabulary of {len(self.vocab)}")

    def __len__(self) -> int:
        return len(self.ids)

    def to_tensor(self) -> torch.Tensor:
        return torch.tensor(self.ids, dtype=torch.long)


def tokenize(text: str, vocab: Vocabulary = None) -> CharacterSequence:
    vocab = default_vocab() if vocab is None else vocab
    return CharacterSequence(
        ids=[vocab.index.get(ch, vocab.unk_id) for ch in text], vocab=vocab
    )


def detokenize(seq: CharacterSequence) -> str:
    chars = []
    for i in seq.ids:
        if i == seq.vocab.pad_id:
            continue
        chars.append(REPLACEMENT_CHAR if i == seq.vocab.unk_id else seq.vocab.symbols[i])
    return "".join(chars)


def pad_character_batch(
    sequences: Sequence[CharacterSequence],
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    :return: ids (B, L_max) padded with the PAD id and a boolean mask (B, L_max), True at characters
    """
    max_len = max(len(s) for s in sequences)
    ids = torch.zeros(len(sequences), max_len, dtype=torch.long)
    mask = torch.zeros(len(sequences), max_len, dtype=torch.bool)
    for i, s in enumerate(sequences):
        ids[i, : len(s)] = s.to_tensor()
        mask[i, : len(s)] = True
    return ids, mask
