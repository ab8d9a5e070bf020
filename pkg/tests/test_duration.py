import math

import pytest
import torch

from latent_flow_tts.data.batches import (
    DurationSample,
    collate_duration,
    duration_reference_spans,
    sample_duration_reference,
)
from latent_flow_tts.errors import EmptyInputError
from latent_flow_tts.latent_ops import CompressedLatent
from latent_flow_tts.models.duration import DurationPredictor, frames_to_seconds
from latent_flow_tts.profiler import parameter_report
from latent_flow_tts.text import tokenize


@pytest.fixture()
def predictor(cfg):
    return DurationPredictor(cfg).eval()


def test_prediction_is_positive_scalar(predictor):
    frames = predictor.predict_duration(tokenize("hello there"), CompressedLatent(torch.randn(8, 20), k_c=2))
    assert isinstance(frames, float)
    assert frames > 0


def test_batch_forward(predictor):
    batch = collate_duration(
        [
            DurationSample(tokenize("abc"), CompressedLatent(torch.randn(8, 5), k_c=2), 30),
            DurationSample(tokenize("a longer one"), CompressedLatent(torch.randn(8, 11), k_c=2), 70),
        ]
    )
    out = predictor(batch.char_ids, batch.char_mask, batch.ref, batch.ref_mask)
    assert out.shape == (2,)
    assert torch.all(out > 0)
    assert batch.target.tolist() == [30.0, 70.0]


def test_padding_does_not_change_prediction(predictor):
    ref = CompressedLatent(torch.randn(8, 5), k_c=2)
    alone = predictor.predict_duration(tokenize("abc"), ref)
    batch = collate_duration(
        [DurationSample(tokenize("abc"), ref, 1), DurationSample(tokenize("abcdefgh"), CompressedLatent(torch.randn(8, 9), k_c=2), 1)]
    )
    with torch.no_grad():
        padded = predictor(batch.char_ids, batch.char_mask, batch.ref, batch.ref_mask)[0]
    assert float(padded) == pytest.approx(alone, rel=1e-4)


def test_empty_text(predictor):
    with pytest.raises(EmptyInputError):
        predictor.predict_duration(tokenize(""), CompressedLatent(torch.randn(8, 5), k_c=2))


def test_empty_reference(predictor):
    with pytest.raises(EmptyInputError):
        predictor.predict_duration(tokenize("abc"), torch.zeros(8, 0))


def test_target_must_be_positive():
    with pytest.raises(ValueError):
        DurationSample(tokenize("a"), CompressedLatent(torch.randn(8, 5), k_c=2), 0)


def test_reference_spans_stay_in_bounds():
    starts, lengths = duration_reference_spans(100, 1_000_000, 0.05, 0.95, torch.Generator().manual_seed(0))
    assert starts.min() == 5 and (starts + lengths).max() == 95
    assert lengths.min() >= 1
    assert torch.all(starts + lengths <= 95)


@pytest.mark.parametrize("n_frames", [10, 30, 33, 57, 123])
def test_reference_spans_round_inward(n_frames):
    starts, lengths = duration_reference_spans(n_frames, 200_000, 0.05, 0.95, torch.Generator().manual_seed(1))
    ends = starts + lengths
    assert starts.min() >= 0.05 * n_frames and ends.max() <= 0.95 * n_frames
    assert starts.min() == math.ceil(0.05 * n_frames) and ends.max() == math.floor(0.95 * n_frames)
    assert lengths.min() >= 1


@pytest.mark.parametrize("n_frames", [1, 2, 7])
def test_short_utterance_reference(n_frames):
    crop = sample_duration_reference(n_frames, torch.Generator().manual_seed(0))
    assert crop.length_frames >= 1
    assert 0 <= crop.start_frame and crop.end_frame <= n_frames


def test_invalid_span_fractions():
    with pytest.raises(ValueError):
        duration_reference_spans(10, 1, 0.9, 0.1)


def test_frames_to_seconds(cfg, full_cfg):
    assert frames_to_seconds(100, cfg) == pytest.approx(100 * 1024 / 44100)
    assert frames_to_seconds(86, full_cfg) == pytest.approx(86 * 6 * 512 / 44100)


def test_full_parameter_count(full_cfg):
    assert parameter_report(full_cfg)["duration"] == pytest.approx(0.5e6, rel=0.2)
