import pytest
import torch

from latent_flow_tts.audio import extract_logmel
from latent_flow_tts.config import build_config
from latent_flow_tts.errors import ConfigMismatchError, StreamStateMismatchError
from latent_flow_tts.latent_ops import Latent
from latent_flow_tts.models.autoencoder import SpeechAutoencoder
from latent_flow_tts.models.convnext import ConvNeXtBlock, PaddedConv1d


@pytest.fixture()
def autoencoder(cfg):
    return SpeechAutoencoder(cfg).double().eval()


def test_encode_shape(cfg, autoencoder):
    latent = autoencoder.encode(torch.randn(16, 10))
    assert latent.values.shape == (4, 10)
    assert latent.frame_rate == pytest.approx(44100 / 512)


def test_encode_channel_mismatch(autoencoder):
    with pytest.raises(ConfigMismatchError):
        autoencoder.encode(torch.randn(17, 10))


@pytest.mark.parametrize("frames", [1, 100])
def test_decode_length(autoencoder, frames):
    audio = autoencoder.decode(Latent(torch.randn(4, frames), 44100 / 512))
    assert len(audio) == frames * 512
    assert audio.sample_rate == 44100


def test_reconstruct_length(autoencoder, tone):
    audio = autoencoder.reconstruct(tone)
    assert len(audio) == (44100 // 512 + 1) * 512
    assert torch.isfinite(audio.samples).all()


def test_training_forward_keeps_length(cfg):
    model = SpeechAutoencoder(cfg)
    out = model(torch.randn(2, 8192) * 0.1)
    assert out.shape == (2, 8192)


def test_decoder_is_causal(autoencoder):
    z = torch.randn(4, 30, dtype=torch.float64)
    full = autoencoder.decode(z).samples
    for k in (1, 10, 29):
        cut = z.clone()
        cut[:, k:] = 0.0
        assert torch.allclose(autoencoder.decode(cut).samples[: k * 512], full[: k * 512], rtol=0, atol=1e-12)


def test_receptive_field_is_impulse_support(autoencoder):
    # order-one weights so the outermost taps carry a response well above rounding
    g = torch.Generator().manual_seed(0)
    with torch.no_grad():
        for p in autoencoder.decoder.parameters():
            p.copy_(0.5 + 0.5 * torch.rand(p.shape, generator=g, dtype=p.dtype))
    decoder = autoencoder.decoder
    # in_conv 6, dilated blocks 6 + 12 + 6, head 2
    assert decoder.receptive_field == 32

    z = torch.randn(4, 50, dtype=torch.float64)
    bumped = z.clone()
    bumped[:, 0] += 10.0
    diff = (autoencoder.decode(bumped).samples - autoencoder.decode(z).samples).abs().view(50, 512)
    per_frame = diff.amax(dim=1)
    assert per_frame[decoder.receptive_field] > 1e-6 * per_frame.max()
    assert torch.all(per_frame[decoder.receptive_field + 1 :] <= 1e-12 * per_frame.max())


def _random_chunks(total: int, generator: torch.Generator):
    sizes = []
    while sum(sizes) < total:
        sizes.append(min(int(torch.randint(1, 9, (1,), generator=generator)), total - sum(sizes)))
    return sizes


def _stream(autoencoder, z, sizes):
    state = autoencoder.init_stream_state()
    outputs, start = [], 0
    for size in sizes:
        audio, state = autoencoder.decode_streaming(state, z[:, start : start + size])
        outputs.append(audio.samples)
        start += size
    return torch.cat(outputs), state


def test_streaming_matches_offline(autoencoder):
    g = torch.Generator().manual_seed(0)
    z = torch.randn(4, 30, generator=g, dtype=torch.float64)
    offline = autoencoder.decode(z).samples

    chunkings = [[1] * 30, [7, 23], [30]] + [_random_chunks(30, g) for _ in range(20)]
    for sizes in chunkings:
        streamed, state = _stream(autoencoder, z, sizes)
        assert torch.allclose(streamed, offline, atol=1e-10)
        assert state.frames_seen == 30


def test_first_frame_is_emitted_immediately(autoencoder):
    z = torch.randn(4, 40, generator=torch.Generator().manual_seed(3), dtype=torch.float64)
    audio, _ = autoencoder.decode_streaming(autoencoder.init_stream_state(), z[:, :1])
    # one frame in, one hop out, whatever the utterance length
    assert len(audio) == 512
    assert torch.allclose(audio.samples, autoencoder.decode(z).samples[:512], atol=1e-10)


def test_streaming_float32(cfg):
    autoencoder = SpeechAutoencoder(cfg).eval()
    z = torch.randn(4, 30)
    with torch.no_grad():
        offline = autoencoder.decode(z).samples
        streamed, _ = _stream(autoencoder, z, [1] * 30)
    assert torch.allclose(streamed, offline, atol=1e-5)


def test_streaming_empty_chunk(autoencoder):
    state = autoencoder.init_stream_state()
    audio, new_state = autoencoder.decode_streaming(state, torch.zeros(4, 0, dtype=torch.float64))
    assert len(audio) == 0
    assert new_state is state


def test_stream_state_mismatch(cfg, autoencoder):
    other_cfg = build_config("toy", {"autoencoder": {"decoder_dilations": [1, 1, 1]}})
    state = SpeechAutoencoder(other_cfg).init_stream_state()
    with pytest.raises(StreamStateMismatchError):
        autoencoder.decode_streaming(state, torch.zeros(4, 1, dtype=torch.float64))


def test_stream_buffer_sizes(autoencoder):
    buffers = autoencoder.init_stream_state().buffers
    convs = autoencoder.decoder.streaming_convs()
    assert set(buffers) == set(convs)
    for name, conv in convs.items():
        assert buffers[name].shape[-1] == (conv.kernel_size[0] - 1) * conv.dilation[0]


def test_encoder_convs_are_not_causal(autoencoder):
    assert not any(
        m.causal for m in autoencoder.encoder.modules() if isinstance(m, PaddedConv1d)
    )
    assert all(m.causal for m in autoencoder.decoder.modules() if isinstance(m, PaddedConv1d))


def test_convnext_block_validation():
    with pytest.raises(ValueError):
        ConvNeXtBlock(8, 16, kernel=4)
    with pytest.raises(ValueError):
        ConvNeXtBlock(8, 16, dilation=0)


def test_full_decoder_dilations(full_cfg):
    assert full_cfg.autoencoder.decoder_dilations == [1, 2, 4, 1, 2, 4, 1, 1, 1, 1]
    with torch.device("meta"):
        model = SpeechAutoencoder(full_cfg)
    assert [b.dilation for b in model.decoder.blocks] == full_cfg.autoencoder.decoder_dilations


def test_full_shapes_on_meta(full_cfg):
    with torch.device("meta"):
        model = SpeechAutoencoder(full_cfg).eval()
        z = model.encoder(torch.empty(1, 228, 100))
        audio = model.decoder(z)
    assert z.shape == (1, 24, 100)
    assert audio.shape == (1, 51200)


def test_encoder_uses_mel_front_end(cfg, tone):
    model = SpeechAutoencoder(cfg).eval()
    mel = extract_logmel(tone, cfg.mel)
    assert model.encode(mel).n_frames == mel.n_frames
