import math

import librosa
import numpy as np
import pytest
import torch

from conftest import sine
from latent_flow_tts.audio import (
    AudioWaveform,
    extract_logmel,
    log_mel,
    multires_mel_bank,
    num_frames,
    read_wav,
    resample,
    write_wav,
)
from latent_flow_tts.config import MelConfig
from latent_flow_tts.errors import EmptyInputError, SampleRateMismatchError


def test_one_second_frame_count(tone):
    mel = extract_logmel(tone, MelConfig())
    assert mel.values.shape == (228, 87)


@pytest.mark.parametrize("length", range(512, 5 * 512 + 1, 37))
def test_frame_count_formula(length):
    cfg = MelConfig(n_mels=16)
    audio = AudioWaveform(samples=torch.randn(length) * 0.1, sample_rate=44100)
    assert extract_logmel(audio, cfg).n_frames == num_frames(length, cfg.hop_size) == length // 512 + 1


def test_silence_is_floor():
    cfg = MelConfig()
    mel = extract_logmel(AudioWaveform(torch.zeros(4096), 44100), cfg)
    assert torch.allclose(mel.values, torch.full_like(mel.values, math.log(cfg.log_floor)))


def test_tone_argmax_is_constant(tone):
    cfg = MelConfig()
    mel = extract_logmel(tone, cfg).values
    argmax = mel[:, 4:-4].argmax(dim=0)
    assert (argmax == argmax[0]).all()

    centers = librosa.mel_frequencies(n_mels=cfg.n_mels + 2, fmin=0.0, fmax=cfg.sample_rate / 2)[1:-1]
    assert abs(int(argmax[0]) - int(np.abs(centers - 440.0).argmin())) <= 1


def test_amplitude_doubling_adds_log4():
    cfg = MelConfig()
    x = sine(1000.0, 0.5).samples.double() + 0.01 * torch.randn(22050, dtype=torch.float64)
    base, doubled = log_mel(x, cfg), log_mel(2 * x, cfg)
    unclamped = base > math.log(cfg.log_floor) + 1e-3
    assert unclamped.any()
    assert torch.allclose((doubled - base)[unclamped], torch.full_like(base[unclamped], math.log(4.0)), atol=1e-8)


def test_extract_is_deterministic(tone):
    a = extract_logmel(tone, MelConfig()).values
    b = extract_logmel(tone, MelConfig()).values
    assert torch.equal(a, b)


def test_sample_rate_mismatch(tone):
    with pytest.raises(SampleRateMismatchError):
        extract_logmel(tone, MelConfig(sample_rate=22050))


def test_empty_audio():
    with pytest.raises(EmptyInputError):
        extract_logmel(AudioWaveform(torch.zeros(0), 44100), MelConfig())


def test_sub_hop_audio_rejected():
    cfg = MelConfig()
    with pytest.raises(EmptyInputError):
        extract_logmel(AudioWaveform(torch.zeros(cfg.hop_size - 1), 44100), cfg)
    mel = extract_logmel(AudioWaveform(torch.zeros(cfg.hop_size), 44100), cfg)
    assert mel.values.shape[-1] >= 1


def test_non_finite_audio_rejected():
    with pytest.raises(ValueError):
        AudioWaveform(torch.tensor([0.0, float("nan")]), 44100)


def test_multires_mel_bank(tone):
    bank = multires_mel_bank(tone)
    assert [m.config.n_mels for m in bank] == [64, 128, 128]
    assert [m.config.hop_size for m in bank] == [256, 512, 1024]
    assert [m.n_frames for m in bank] == [44100 // h + 1 for h in (256, 512, 1024)]

    again = multires_mel_bank(tone)
    assert all(torch.equal(a.values, b.values) for a, b in zip(bank, again))


def test_multires_silence_is_floor():
    for mel in multires_mel_bank(AudioWaveform(torch.zeros(8192), 44100)):
        assert torch.allclose(mel.values, torch.full_like(mel.values, math.log(1e-5)))


def test_resample_identity(tone):
    assert resample(tone, 44100) is tone


def test_resample_keeps_frequency():
    up = resample(sine(100.0, 1.0, sample_rate=22050), 44100)
    assert up.sample_rate == 44100
    spectrum = np.abs(np.fft.rfft(up.samples.numpy()))
    freqs = np.fft.rfftfreq(len(up), 1 / 44100)
    assert abs(freqs[spectrum.argmax()] - 100.0) <= 1.0


def test_resample_length():
    down = resample(sine(440.0, 1.0, sample_rate=48000), 44100)
    assert abs(len(down) - 44100) <= 1


def test_resample_invalid_rate(tone):
    with pytest.raises(ValueError):
        resample(tone, 0)


@pytest.mark.parametrize("subtype, atol", [("PCM_16", 1 / 32767), ("FLOAT", 0.0)])
def test_wav_io(tmp_path, tone, subtype, atol):
    path = str(tmp_path / "tone.wav")
    write_wav(path, tone, subtype)
    audio = read_wav(path)
    assert audio.sample_rate == 44100
    assert torch.allclose(audio.samples, tone.samples, atol=atol + 1e-7)


def test_wav_write_clips(tmp_path):
    path = str(tmp_path / "loud.wav")
    write_wav(path, [2.0, -3.0, 0.5], "FLOAT", sample_rate=16000)
    assert read_wav(path).samples.tolist() == [1.0, -1.0, 0.5]


def test_stereo_is_averaged(tmp_path):
    import scipy.io.wavfile

    path = str(tmp_path / "stereo.wav")
    scipy.io.wavfile.write(path, 8000, np.array([[0.5, 0.1], [-0.2, 0.2]], dtype=np.float32))
    assert torch.allclose(read_wav(path).samples, torch.tensor([0.3, 0.0]))
