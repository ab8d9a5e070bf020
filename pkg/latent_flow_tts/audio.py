import functools
import math
from dataclasses import dataclass
from typing import List, Literal, Sequence, Union

import librosa
import numpy as np
import scipy.io.wavfile
import scipy.signal
import torch

from latent_flow_tts.config import GanConfig, MelConfig
from latent_flow_tts.errors import EmptyInputError, SampleRateMismatchError

WavSubtype = Literal["PCM_16", "FLOAT"]


@dataclass
class AudioWaveform:
    samples: torch.Tensor
    sample_rate: int

    def __post_init__(self):
        if not isinstance(self.samples, torch.Tensor):
            self.samples = torch.as_tensor(np.asarray(self.samples), dtype=torch.float32)
        if self.samples.dim() != 1:
            raise ValueError(f"expected mono samples, got shape {tuple(self.samples.shape)}")
        if self.sample_rate <= 0:
            raise ValueError(f"{self.sample_rate=} must be positive")
        if not torch.isfinite(self.samples).all():
            raise ValueError("audio contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.shape[-1]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class MelSpectrogram:
    values: torch.Tensor
    config: MelConfig

    @property
    def n_frames(self) -> int:
        return self.values.shape[-1]


def num_frames(num_samples: int, hop_size: int) -> int:
    """Frame count under center padding of fft_size/2 on both ends."""
    return num_samples // hop_size + 1


@functools.lru_cache(maxsize=32)
def _mel_basis(
    sample_rate: int, fft_size: int, n_mels: int, f_min: float, f_max
) -> np.ndarray:
    return librosa.filters.mel(
        sr=sample_rate,
        n_fft=fft_size,
        n_mels=n_mels,
        fmin=f_min,
        fmax=f_max,
        htk=False,
        norm="slaney",
    )


def _center_pad(samples: torch.Tensor, pad: int) -> torch.Tensor:
    # reflection is impossible for signals not longer than the pad
    mode = "reflect" if samples.shape[-1] > pad else "constant"
    shape = samples.shape
    padded = torch.nn.functional.pad(
        samples.reshape(-1, 1, shape[-1]), (pad, pad), mode=mode
    )
    return padded.reshape(*shape[:-1], padded.shape[-1])


def stft_magnitude(
    samples: torch.Tensor, fft_size: int, hop_size: int, win_size: int
) -> torch.Tensor:
    """
    Magnitude STFT with Hann window and center padding.

    :param samples: tensor of shape (..., num_samples)
    :return: tensor of shape (..., fft_size // 2 + 1, num_samples // hop_size + 1)
    """
    lead = samples.shape[:-1]
    padded = _center_pad(samples, fft_size // 2).reshape(-1, samples.shape[-1] + 2 * (fft_size // 2))
    window = torch.hann_window(win_size, dtype=samples.dtype, device=samples.device)
    spec = torch.stft(
        padded,
        n_fft=fft_size,
        hop_length=hop_size,
        win_length=win_size,
        window=window,
        center=False,
        return_complex=True,
    )
    mag = spec.abs()
    return mag.reshape(*lead, *mag.shape[-2:])


def log_mel(samples: torch.Tensor, cfg: MelConfig) -> torch.Tensor:
    """
    Differentiable log-mel extraction on power spectrograms with a Slaney filterbank.

    :param samples: tensor of shape (..., num_samples)
    :param cfg: mel configuration
    :return: tensor of shape (..., n_mels, num_samples // hop + 1)
    """
    power = stft_magnitude(samples, cfg.fft_size, cfg.hop_size, cfg.win_size).pow(2)
    basis = torch.as_tensor(
        _mel_basis(cfg.sample_rate, cfg.fft_size, cfg.n_mels, cfg.f_min, cfg.f_max),
        dtype=samples.dtype,
        device=samples.device,
    )
    mel = torch.matmul(basis, power)
    return torch.log(torch.clamp(mel, min=cfg.log_floor))


def log_linear_spectrogram(
    samples: torch.Tensor, fft_size: int, log_floor: float = 1e-5
) -> torch.Tensor:
    hop, win = fft_size // 4, fft_size
    mag = stft_magnitude(samples, fft_size, hop, win)
    return torch.log(torch.clamp(mag, min=log_floor))


def extract_logmel(audio: AudioWaveform, cfg: MelConfig) -> MelSpectrogram:
    if audio.sample_rate != cfg.sample_rate:
        raise SampleRateMismatchError(
            f"audio at {audio.sample_rate} Hz, mel config expects {cfg.sample_rate} Hz"
        )
    if len(audio) < cfg.hop_size:
        raise EmptyInputError(
            f"cannot extract a mel spectrogram from {len(audio)} samples, shorter than one hop of {cfg.hop_size}"
        )

    return MelSpectrogram(values=log_mel(audio.samples, cfg), config=cfg)


def recon_mel_configs(gan_cfg: GanConfig, mel_cfg: MelConfig) -> List[MelConfig]:
    """The mel configs of the multi-resolution reconstruction loss (hop = FFT/4, window = FFT)."""
    return [
        MelConfig(
            fft_size=fft,
            hop_size=fft // 4,
            win_size=fft,
            n_mels=n_mels,
            sample_rate=mel_cfg.sample_rate,
            log_floor=mel_cfg.log_floor,
        )
        for fft, n_mels in zip(gan_cfg.recon_fft_sizes, gan_cfg.recon_n_mels)
    ]


def multires_mel_bank(
    audio: AudioWaveform, gan_cfg: GanConfig = None, mel_cfg: MelConfig = None
) -> List[MelSpectrogram]:
    gan_cfg = GanConfig() if gan_cfg is None else gan_cfg
    mel_cfg = MelConfig() if mel_cfg is None else mel_cfg
    return [extract_logmel(audio, cfg) for cfg in recon_mel_configs(gan_cfg, mel_cfg)]


def resample(audio: AudioWaveform, target_rate: int) -> AudioWaveform:
    """Windowed-sinc polyphase resampling; the output keeps the duration within one sample."""
    if target_rate <= 0:
        raise ValueError(f"{target_rate=} must be positive")
    if target_rate == audio.sample_rate:
        return audio

    g = math.gcd(target_rate, audio.sample_rate)
    up, down = target_rate // g, audio.sample_rate // g
    out = scipy.signal.resample_poly(audio.samples.double().numpy(), up, down)

    return AudioWaveform(
        samples=torch.from_numpy(out).to(audio.samples.dtype), sample_rate=target_rate
    )


def to_mono(data: np.ndarray) -> np.ndarray:
    if data.ndim == 2:
        data = data.mean(axis=1)
    return data


def read_wav(path: str) -> AudioWaveform:
    """Reads RIFF PCM (8/16/32-bit) or IEEE float WAV files; multi-channel files are averaged."""
    sample_rate, data = scipy.io.wavfile.read(path)

    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float32) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float32) - 128.0) / 128.0
    else:
        data = data.astype(np.float32)

    return AudioWaveform(samples=torch.from_numpy(to_mono(data).copy()), sample_rate=sample_rate)


def write_wav(
    path: str,
    audio: Union[AudioWaveform, Sequence[float]],
    subtype: WavSubtype = "PCM_16",
    sample_rate: int = None,
) -> None:
    if not isinstance(audio, AudioWaveform):
        audio = AudioWaveform(samples=torch.as_tensor(audio), sample_rate=sample_rate)

    data = audio.samples.detach().cpu().float().clamp(-1.0, 1.0).numpy()
    if subtype == "PCM_16":
        data = np.round(data * 32767.0).astype(np.int16)
    elif subtype == "FLOAT":
        data = data.astype(np.float32)
    else:
        raise ValueError(f"{subtype=} is not supported")

    scipy.io.wavfile.write(path, audio.sample_rate, data)
