from dataclasses import dataclass
from typing import Dict, Tuple, Union

import torch
from torch import nn

from latent_flow_tts.audio import AudioWaveform, MelSpectrogram, extract_logmel, log_mel
from latent_flow_tts.config import ModelConfig
from latent_flow_tts.errors import ConfigMismatchError, StreamStateMismatchError
from latent_flow_tts.latent_ops import Latent
from latent_flow_tts.models.convnext import ConvNeXtBlock, PaddedConv1d


class LatentEncoder(nn.Module):
    """Maps log-mel frames (B, n_mels, T) to latents (B, latent_dim, T); non-causal."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ae = cfg.autoencoder
        self.n_mels = cfg.mel.n_mels

        self.in_conv = PaddedConv1d(cfg.mel.n_mels, ae.width, ae.encoder_kernel)
        self.in_norm = nn.BatchNorm1d(ae.width, eps=ae.bn_eps, momentum=ae.bn_momentum)
        self.blocks = nn.ModuleList(
            [
                ConvNeXtBlock(
                    ae.width,
                    ae.intermediate,
                    ae.encoder_kernel,
                    layer_scale=1.0 / ae.n_encoder_blocks,
                    init_std=ae.init_std,
                )
                for _ in range(ae.n_encoder_blocks)
            ]
        )
        self.proj = nn.Linear(ae.width, ae.latent_dim)
        self.out_norm = nn.LayerNorm(ae.latent_dim)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        if mel.shape[-2] != self.n_mels:
            raise ConfigMismatchError(
                f"mel has {mel.shape[-2]} channels, encoder expects {self.n_mels}"
            )
        x = self.in_norm(self.in_conv(mel))
        for block in self.blocks:
            x = block(x)
        return self.out_norm(self.proj(x.transpose(1, 2))).transpose(1, 2)


@dataclass
class StreamState:
    """
    Left-context buffers of every causal convolution of one decoder stream.
    Buffers are keyed by module name and hold (kernel - 1) * dilation input frames.
    """

    buffers: Dict[str, torch.Tensor]
    spec: str
    frames_seen: int = 0


class LatentDecoder(nn.Module):
    """
    Causal decoder mapping latents (B, latent_dim, T) to waveforms (B, T * hop).
    Every convolution is causal so the decoder can also run chunk by chunk.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ae = cfg.autoencoder
        self.latent_dim = ae.latent_dim
        self.hop_size = cfg.mel.hop_size

        self.in_conv = PaddedConv1d(ae.latent_dim, ae.width, ae.decoder_kernel, causal=True)
        self.in_norm = nn.BatchNorm1d(ae.width, eps=ae.bn_eps, momentum=ae.bn_momentum)
        self.blocks = nn.ModuleList(
            [
                ConvNeXtBlock(
                    ae.width,
                    ae.intermediate,
                    ae.decoder_kernel,
                    dilation=d,
                    causal=True,
                    layer_scale=1.0 / len(ae.decoder_dilations),
                    init_std=ae.init_std,
                )
                for d in ae.decoder_dilations
            ]
        )
        self.norm = nn.BatchNorm1d(ae.width, eps=ae.bn_eps, momentum=ae.bn_momentum)
        self.head_conv = PaddedConv1d(ae.width, ae.head_hidden, ae.head_kernel, causal=True)
        self.head_act = nn.PReLU(ae.head_hidden)
        self.head_linear = nn.Linear(ae.head_hidden, cfg.mel.hop_size)

        nn.init.trunc_normal_(self.head_linear.weight, std=ae.init_std)
        nn.init.zeros_(self.head_linear.bias)

    @property
    def receptive_field(self) -> int:
        """Number of past frames (excluding the current one) an output frame depends on."""
        return sum(
            m.context_size for m in self.modules() if isinstance(m, PaddedConv1d) and m.causal
        )

    def _check_channels(self, z: torch.Tensor):
        if z.shape[-2] != self.latent_dim:
            raise ConfigMismatchError(
                f"latent has {z.shape[-2]} channels, decoder expects {self.latent_dim}"
            )

    def _head(self, x: torch.Tensor) -> torch.Tensor:
        x = self.head_act(x)
        frames = self.head_linear(x.transpose(1, 2))
        return frames.reshape(frames.shape[0], -1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        self._check_channels(z)
        x = self.in_norm(self.in_conv(z))
        for block in self.blocks:
            x = block(x)
        return self._head(self.head_conv(self.norm(x)))

    def streaming_convs(self) -> Dict[str, PaddedConv1d]:
        return {
            name: m
            for name, m in self.named_modules()
            if isinstance(m, PaddedConv1d) and m.causal
        }

    def init_buffers(self, batch_size: int = 1) -> Dict[str, torch.Tensor]:
        return {name: m.init_buffer(batch_size) for name, m in self.streaming_convs().items()}

    def forward_streaming(
        self, z: torch.Tensor, buffers: Dict[str, torch.Tensor]
    ) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
        self._check_channels(z)
        new = {}

        x, new["in_conv"] = self.in_conv.forward_streaming(z, buffers["in_conv"])
        x = self.in_norm(x)
        for i, block in enumerate(self.blocks):
            name = f"blocks.{i}.dwconv"
            x, new[name] = block.forward_streaming(x, buffers[name])
        x, new["head_conv"] = self.head_conv.forward_streaming(
            self.norm(x), buffers["head_conv"]
        )
        return self._head(x), new


class SpeechAutoencoder(nn.Module):
    """
    Mel front end, latent encoder and causal latent decoder.
    Tensor-level `forward` serves training; the remaining methods work on single utterances.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = LatentEncoder(cfg)
        self.decoder = LatentDecoder(cfg)

    @property
    def stream_spec(self) -> str:
        ae = self.cfg.autoencoder
        return (
            f"latent={ae.latent_dim},width={ae.width},k={ae.decoder_kernel},"
            f"dilations={list(ae.decoder_dilations)},head_k={ae.head_kernel},hop={self.cfg.mel.hop_size}"
        )

    def forward(self, audio: torch.Tensor) -> torch.Tensor:
        """
        :param audio: tensor of shape (B, N)
        :return: reconstruction of shape (B, N)
        """
        z = self.encoder(log_mel(audio, self.cfg.mel))
        return self.decoder(z)[..., : audio.shape[-1]]

    def encode(self, mel: Union[MelSpectrogram, torch.Tensor]) -> Latent:
        values = mel.values if isinstance(mel, MelSpectrogram) else mel
        z = self.encoder(values.unsqueeze(0).to(self._dtype))
        return Latent(values=z.squeeze(0), frame_rate=self.cfg.mel.frame_rate)

    def decode(self, latent: Union[Latent, torch.Tensor]) -> AudioWaveform:
        values = latent.values if isinstance(latent, Latent) else latent
        audio = self.decoder(values.unsqueeze(0).to(self._dtype))
        return AudioWaveform(samples=audio.squeeze(0), sample_rate=self.cfg.mel.sample_rate)

    def reconstruct(self, audio: AudioWaveform) -> AudioWaveform:
        mel = extract_logmel(audio, self.cfg.mel)
        return self.decode(self.encode(mel))

    def init_stream_state(self, batch_size: int = 1) -> StreamState:
        return StreamState(buffers=self.decoder.init_buffers(batch_size), spec=self.stream_spec)

    def decode_streaming(
        self, state: StreamState, chunk: Union[Latent, torch.Tensor]
    ) -> Tuple[AudioWaveform, StreamState]:
        """
        Decodes the next chunk of a latent stream; concatenated outputs over any chunking
        equal `decode` of the full sequence (in eval mode).
        """
        if state.spec != self.stream_spec:
            raise StreamStateMismatchError(
                f"stream state built for '{state.spec}', decoder is '{self.stream_spec}'"
            )

        values = chunk.values if isinstance(chunk, Latent) else chunk
        if values.shape[0] != self.cfg.autoencoder.latent_dim:
            raise ConfigMismatchError(
                f"chunk has {values.shape[0]} channels, decoder expects {self.cfg.autoencoder.latent_dim}"
            )

        if values.shape[-1] == 0:
            empty = values.new_zeros(0)
            return AudioWaveform(samples=empty, sample_rate=self.cfg.mel.sample_rate), state

        audio, buffers = self.decoder.forward_streaming(
            values.unsqueeze(0).to(self._dtype), state.buffers
        )
        new_state = StreamState(
            buffers=buffers,
            spec=state.spec,
            frames_seen=state.frames_seen + values.shape[-1],
        )
        return AudioWaveform(samples=audio.squeeze(0), sample_rate=self.cfg.mel.sample_rate), new_state

    @property
    def _dtype(self) -> torch.dtype:
        return self.decoder.head_linear.weight.dtype

