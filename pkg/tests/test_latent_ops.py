import pytest
import torch

from latent_flow_tts.errors import ConfigMismatchError
from latent_flow_tts.latent_ops import (
    CompressedLatent,
    Latent,
    compress,
    decompress,
    denormalize,
    fit_stats,
    load_stats,
    normalize,
    save_stats,
)


def test_compress_layout():
    x = torch.tensor([[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]])
    cl = compress(Latent(x, 86.13), k_c=2)
    assert cl.values.shape == (4, 2)
    assert cl.values[:, 0].tolist() == [1.0, 2.0, 5.0, 6.0]
    assert cl.values[:, 1].tolist() == [3.0, 4.0, 7.0, 8.0]
    assert torch.equal(decompress(cl).values, x)


def test_compress_identity():
    x = torch.randn(24, 17)
    cl = compress(x, k_c=1)
    assert torch.equal(cl.values, x)
    assert cl.pad_frames == 0


def test_full_shapes():
    assert compress(torch.randn(24, 600), k_c=6).values.shape == (144, 100)
    assert decompress(CompressedLatent(torch.randn(144, 1), k_c=6)).values.shape == (24, 6)


@pytest.mark.parametrize("seed", range(100))
def test_round_trip_is_bitwise(seed):
    g = torch.Generator().manual_seed(seed)
    frames = 96 if seed % 2 == 0 else int(torch.randint(1, 200, (1,), generator=g))
    x = torch.randn(24, frames, generator=g)

    cl = compress(x, k_c=6)
    assert cl.n_frames == -(-frames // 6)
    assert cl.source_frames == frames
    assert cl.values.numel() == 24 * (frames + cl.pad_frames)
    assert torch.equal(decompress(cl).values, x)


def test_malformed_channel_count():
    with pytest.raises(ValueError):
        CompressedLatent(torch.randn(5, 3), k_c=2)


def test_stats_of_standard_normal():
    g = torch.Generator().manual_seed(0)
    stats = fit_stats([torch.randn(8, 5000, generator=g), torch.randn(8, 5000, generator=g)])
    assert stats.sample_count == 10_000
    assert torch.all(stats.mean.abs() < 0.05)
    assert torch.all((stats.std - 1).abs() < 0.05)


def test_normalized_fitting_set_is_standard():
    x = torch.randn(6, 400) * torch.arange(1, 7).unsqueeze(-1) + 3.0
    cl = CompressedLatent(x, k_c=2)
    normalized = normalize(cl, fit_stats([cl])).values.double()
    assert torch.allclose(normalized.mean(dim=1), torch.zeros(6, dtype=torch.float64), atol=1e-4)
    assert torch.allclose(normalized.std(dim=1, unbiased=False), torch.ones(6, dtype=torch.float64), atol=1e-4)


def test_constant_channel_is_clamped():
    x = torch.randn(3, 50)
    x[1] = 2.5
    with pytest.warns(UserWarning):
        stats = fit_stats([x], eps=1e-5)
    assert stats.std[1].item() == pytest.approx(1e-5)
    assert torch.all(normalize(CompressedLatent(x, k_c=1), stats).values[1] == 0)


def test_normalize_round_trip():
    cl = CompressedLatent(torch.randn(8, 64, dtype=torch.float64) * 3 + 1, k_c=2)
    stats = fit_stats([cl])
    assert stats.k_c == 2
    back = denormalize(normalize(cl, stats), stats)
    assert (back.values - cl.values).abs().max() < 1e-6


def test_normalize_keeps_argmax():
    cl = CompressedLatent(torch.randn(4, 30), k_c=1)
    normalized = normalize(cl, fit_stats([cl]))
    assert torch.equal(normalized.values.argmax(dim=1), cl.values.argmax(dim=1))


def test_too_few_frames():
    with pytest.raises(ValueError):
        fit_stats([torch.randn(4, 1)])


def test_channel_mismatch():
    stats = fit_stats([torch.randn(4, 10)])
    with pytest.raises(ValueError):
        normalize(CompressedLatent(torch.randn(6, 10), k_c=2), stats)


def test_stats_file(tmp_path):
    path = str(tmp_path / "latent_stats.json")
    stats = fit_stats([CompressedLatent(torch.randn(4, 20), k_c=2)])
    save_stats(path, stats, fingerprint="abc")

    loaded = load_stats(path, fingerprint="abc")
    assert torch.equal(loaded.mean, stats.mean)
    assert torch.equal(loaded.std, stats.std)
    assert (loaded.k_c, loaded.sample_count) == (2, 20)

    with pytest.raises(ConfigMismatchError):
        load_stats(path, fingerprint="other")
