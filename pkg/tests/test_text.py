import pytest
import torch

from latent_flow_tts.text import (
    PAD,
    REPLACEMENT_CHAR,
    UNK,
    CharacterSequence,
    Vocabulary,
    default_vocab,
    detokenize,
    pad_character_batch,
    tokenize,
)


def test_vocab_layout():
    vocab = default_vocab()
    assert vocab.symbols[:2] == (PAD, UNK)
    assert vocab.index[" "] == 2
    assert len(vocab) == 97


def test_round_trip():
    text = "Hello, world! 42"
    seq = tokenize(text)
    assert len(seq) == len(text)
    assert detokenize(seq) == text


def test_empty_text():
    seq = tokenize("")
    assert seq.ids == []
    assert detokenize(seq) == ""


def test_unknown_character():
    seq = tokenize("aéb")
    assert seq.ids[1] == default_vocab().unk_id
    assert detokenize(seq) == "a" + REPLACEMENT_CHAR + "b"


def test_ids_out_of_range():
    with pytest.raises(ValueError):
        CharacterSequence(ids=[0, 1000], vocab=default_vocab())


def test_vocab_must_start_with_specials():
    with pytest.raises(ValueError):
        Vocabulary(("a", PAD, UNK))
    with pytest.raises(ValueError):
        Vocabulary((PAD, UNK, "a", "a"))


def test_pad_batch():
    ids, mask = pad_character_batch([tokenize("abc"), tokenize("a")])
    assert ids.shape == mask.shape == (2, 3)
    assert mask.tolist() == [[True, True, True], [True, False, False]]
    assert torch.all(ids[1, 1:] == 0)
