import pytest
import torch

from latent_flow_tts.audio import recon_mel_configs
from latent_flow_tts.config import DiscriminatorConfig, MelConfig
from latent_flow_tts.errors import NonFiniteLossError
from latent_flow_tts.losses.gan import (
    GanLosses,
    GanLossWeights,
    adversarial_generator_loss,
    check_finite,
    discriminator_loss,
    feature_matching_loss,
    generator_loss,
    reconstruction_loss,
)
from latent_flow_tts.models.discriminators import (
    DiscriminatorOutput,
    Discriminators,
    MultiPeriodDiscriminator,
    MultiResolutionDiscriminator,
    PeriodDiscriminator,
    mpd_forward,
    mrd_forward,
    period_padding,
)


@pytest.fixture()
def segments():
    return torch.randn(2, 8192) * 0.1


def test_period_padding():
    assert period_padding(8192, 7) == 5
    assert period_padding(8192, 2) == 0
    assert all((n + period_padding(n, p)) % p == 0 for n in range(1, 50) for p in (2, 3, 5, 7, 11))


def test_mpd_score_maps(cfg, segments):
    out = MultiPeriodDiscriminator(cfg.discriminator)(segments)
    assert len(out.score_maps) == 5
    assert len(out.feature_maps) == 5 * len(cfg.discriminator.mpd_channels)
    assert all(s.shape[0] == 2 and torch.isfinite(s).all() for s in out.score_maps)


def test_period_shorter_than_segment():
    with pytest.raises(ValueError):
        PeriodDiscriminator(7, [2, 1])(torch.randn(1, 5))


def test_mrd_score_maps(cfg, segments):
    out = MultiResolutionDiscriminator(cfg.discriminator)(segments)
    assert len(out.score_maps) == 3
    assert len(out.feature_maps) == 3 * len(cfg.discriminator.mrd_channels)


def test_mrd_layer_layout():
    cfg = DiscriminatorConfig()
    assert cfg.mrd_fft_sizes == [512, 1024, 2048]
    assert cfg.periods == [2, 3, 5, 7, 11]

    mrd = MultiResolutionDiscriminator(cfg)
    convs = mrd.discriminators[0].convs
    assert [c.out_channels for c in convs] == [16, 16, 16, 16, 16, 1]
    assert [c.kernel_size for c in convs] == [(5, 5)] * 5 + [(3, 3)]
    assert [c.stride for c in convs] == [(1, 1), (2, 1), (2, 1), (2, 1), (1, 1), (1, 1)]


def test_silence_scores_are_finite(cfg):
    out = Discriminators(cfg.discriminator)(torch.zeros(1, 8192))
    assert len(out.score_maps) == 8
    assert all(torch.isfinite(s).all() for s in out.score_maps)


def test_single_clip_forward(cfg):
    audio = torch.randn(8192) * 0.1
    assert len(mpd_forward(MultiPeriodDiscriminator(cfg.discriminator), audio).score_maps) == 5
    assert len(mrd_forward(MultiResolutionDiscriminator(cfg.discriminator), audio).score_maps) == 3


def test_identical_audio_has_zero_recon_and_fm(cfg, segments):
    discriminators = Discriminators(cfg.discriminator)
    out = discriminators(segments)
    losses = generator_loss(
        segments, segments.clone(), out, discriminators(segments), GanLossWeights(),
        recon_mel_configs(cfg.gan, cfg.mel),
    )
    assert losses.l_recon.item() == 0.0
    assert losses.l_fm.item() == 0.0


def test_adversarial_generator_loss():
    assert adversarial_generator_loss([torch.ones(2, 5), torch.ones(2, 3)]).item() == 0.0
    assert adversarial_generator_loss([torch.full((2, 5), -1.0)]).item() == 4.0


def test_discriminator_loss_targets():
    real = DiscriminatorOutput(score_maps=[torch.ones(2, 4)])
    fake = DiscriminatorOutput(score_maps=[-torch.ones(2, 4)])
    assert discriminator_loss(real, fake).item() == 0.0

    zeros = DiscriminatorOutput(score_maps=[torch.zeros(2, 4)])
    assert discriminator_loss(zeros, zeros).item() == 2.0


def test_total_loss_weights():
    losses = GanLosses(
        l_recon=torch.tensor(0.2), l_adv_g=torch.tensor(0.5), l_fm=torch.tensor(0.3),
        weights=GanLossWeights(),
    )
    assert losses.total_loss.item() == pytest.approx(45 * 0.2 + 1 * 0.5 + 0.1 * 0.3)
    assert set(losses.log_dict()) == {"l_recon", "l_adv_g", "l_fm", "l_g"}


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        GanLossWeights(lambda_fm=-0.1)


def test_feature_matching_length_mismatch():
    with pytest.raises(ValueError):
        feature_matching_loss([torch.zeros(1)], [])


def test_discriminator_loss_gradcheck():
    real = torch.randn(2, 6, dtype=torch.float64, requires_grad=True)
    fake = torch.randn(2, 6, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(
        lambda r, f: discriminator_loss(DiscriminatorOutput([r]), DiscriminatorOutput([f])),
        (real, fake),
    )


def test_non_finite_component_is_named():
    with pytest.raises(NonFiniteLossError) as err:
        check_finite(l_recon=torch.tensor(1.0), l_fm=torch.tensor(float("nan")))
    assert err.value.component == "l_fm"

    nan = DiscriminatorOutput(score_maps=[torch.tensor([float("nan")])])
    with pytest.raises(NonFiniteLossError) as err:
        discriminator_loss(nan, nan)
    assert err.value.component == "l_d"


def test_generator_losses_gradcheck():
    g = torch.Generator().manual_seed(0)
    real = torch.randn(1, 256, generator=g, dtype=torch.float64)
    fake = torch.randn(1, 256, generator=g, dtype=torch.float64, requires_grad=True)
    mel = [MelConfig(fft_size=128, hop_size=32, win_size=128, n_mels=8, sample_rate=8000)]
    assert torch.autograd.gradcheck(lambda f: reconstruction_loss(real, f, mel), (fake,))

    score = torch.randn(2, 5, generator=g, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda s: adversarial_generator_loss([s]), (score,))

    real_feature = torch.randn(2, 5, generator=g, dtype=torch.float64)
    fake_feature = torch.randn(2, 5, generator=g, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(
        lambda f: feature_matching_loss([real_feature], [f]), (fake_feature,)
    )
