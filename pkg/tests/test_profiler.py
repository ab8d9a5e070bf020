import json
import time

import pytest
import torch
from torch import nn

from latent_flow_tts.audio import AudioWaveform
from latent_flow_tts.errors import BenchmarkError
from latent_flow_tts.models.autoencoder import SpeechAutoencoder
from latent_flow_tts.models.text_to_latent import TextToLatent
from latent_flow_tts.profiler import (
    TimingStats,
    Workload,
    bench_expansion,
    benchmark,
    compressed_frames,
    count_flops,
    count_params,
    count_params_by_child,
    parameter_report,
    profile_report,
    real_time_factor,
    ttl_training_flops,
)


@pytest.fixture(scope="module")
def full_params(full_cfg):
    return parameter_report(full_cfg)


def test_conv_flops():
    conv = nn.Conv1d(4, 4, 7, padding=3, bias=False)
    assert count_flops(conv, torch.randn(1, 4, 10)).flops == 2 * 7 * 4 * 4 * 10
    assert count_flops(conv, torch.randn(1, 4, 10), flops_per_mac=1).macs == 7 * 4 * 4 * 10


def test_linear_params_and_flops():
    linear = nn.Linear(10, 5)
    assert count_params(linear) == 55
    assert count_flops(linear, torch.randn(3, 10)).flops == 2 * 3 * 5 * 10 + 3 * 5


def test_unknown_layer():
    with pytest.raises(ValueError):
        count_flops(nn.Sequential(nn.Linear(3, 3), nn.Tanh()), torch.randn(1, 3))


def test_counting_leaves_the_module_untouched():
    linear = nn.Linear(4, 4)
    count_flops(linear, torch.randn(2, 4))
    assert not linear.weight.is_meta
    assert not linear._forward_hooks


@pytest.mark.parametrize("name, target, rel", [("ttl", 18.5e6, 0.1), ("decoder", 25e6, 0.1), ("duration", 0.5e6, 0.2), ("all", 44e6, 0.1)])
def test_full_parameter_counts(full_params, name, target, rel):
    assert full_params[name] == pytest.approx(target, rel=rel)


def test_parameter_parts_add_up(full_params):
    parts = {k: v for k, v in full_params.items() if k.startswith("ttl.")}
    assert sum(parts.values()) == full_params["ttl"]
    assert full_params["all"] == full_params["ttl"] + full_params["decoder"] + full_params["duration"]


def test_children_add_up(cfg):
    model = TextToLatent(cfg)
    assert sum(count_params_by_child(model).values()) == count_params(model)


def test_full_training_gflops(full_cfg):
    with torch.device("meta"):
        model = TextToLatent(full_cfg)
    base = ttl_training_flops(full_cfg, 16, 1, flops_per_mac=1, model=model).gflops
    assert base == pytest.approx(65.295, rel=0.15)
    assert ttl_training_flops(full_cfg, 16, 2, flops_per_mac=1, model=model).gflops / base == pytest.approx(1.84, abs=0.1)
    assert ttl_training_flops(full_cfg, 16, 4, flops_per_mac=1, model=model).gflops / base == pytest.approx(3.52, abs=0.15)


@pytest.mark.parametrize("k_e", [2, 4])
def test_expansion_identity(cfg, k_e):
    single = ttl_training_flops(cfg, 4, 1)
    expanded = ttl_training_flops(cfg, 4, k_e)
    assert expanded.encoders.flops == single.encoders.flops
    assert expanded.flops == k_e * single.denoiser.flops + single.encoders.flops


def test_activation_memory_grows_with_expansion(full_cfg):
    sizes = [ttl_training_flops(full_cfg, 16, k).activation_bytes for k in (1, 2, 4)]
    assert sizes[0] < sizes[1] < sizes[2]


def test_decoder_flops_are_linear_in_length(cfg):
    decoder = SpeechAutoencoder(cfg).decoder
    f100, f200, f400 = (count_flops(decoder, torch.empty(1, 4, t)).flops for t in (100, 200, 400))
    assert f400 - f200 == 2 * (f200 - f100)
    assert f200 == 2 * f100


def test_workload_frames(full_cfg):
    # 15 s of speech: 1292 mel frames, 216 compressed frames at K_c = 6
    assert compressed_frames(Workload().speech_s, full_cfg) == 216


def test_benchmark_sleep():
    stats = benchmark(lambda: time.sleep(0.01), trials=5, warmup=1)
    assert 0.009 <= stats.mean <= 0.03
    assert stats.trials == 5 and len(stats.times) == 5
    assert stats.ci95 >= 0


def test_benchmark_needs_two_trials():
    with pytest.raises(ValueError):
        benchmark(lambda: None, trials=1)


def test_benchmark_reports_failing_trial():
    calls = []

    def flaky():
        calls.append(None)
        if len(calls) == 3:
            raise RuntimeError("boom")

    with pytest.raises(BenchmarkError) as err:
        benchmark(flaky, trials=5, warmup=1)
    assert err.value.trial == 1
    assert isinstance(err.value.__cause__, RuntimeError)


def test_timing_overlap():
    a = TimingStats(mean=1.0, ci95=0.1, trials=10)
    assert a.overlaps(TimingStats(mean=1.15, ci95=0.1, trials=10))
    assert not a.overlaps(TimingStats(mean=1.5, ci95=0.1, trials=10))


def test_real_time_factor():
    assert real_time_factor(0.5, AudioWaveform(torch.zeros(44100), 44100)) == pytest.approx(0.5)
    assert real_time_factor(1.0, 4.0) == 0.25
    with pytest.raises(ValueError):
        real_time_factor(1.0, 0.0)


def test_bench_expansion_grid(cfg):
    grid = bench_expansion(cfg, (2, 4), (1, 2, 4))
    assert len(grid) == 6
    assert {"batch_size", "k_e", "gflops", "activation_gib", "iter_s"} <= set(grid.columns)
    for _, rows in grid.groupby("batch_size"):
        assert rows.sort_values("k_e").gflops.is_monotonic_increasing
    assert grid.iter_s.isna().all()


def test_profile_report_is_json(cfg):
    report = profile_report(cfg, batch_size=2, k_e_values=(1, 2))
    payload = json.loads(json.dumps(report.to_dict()))
    assert payload["preset"] == "toy"
    assert set(payload["gflops"]) == {"1", "2"}
    assert payload["params"]["all"] > 0
    assert payload["decoder_gflops_per_second"] > 0
    assert payload["timings"] == {}
