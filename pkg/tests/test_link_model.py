import numpy as np
import pytest

from fedsim.errors import ConfigError
from fedsim.link_model import (ActiveSet, StaticLinkProcess, UniformLinkProcess,
                               ZipfCountLinkProcess, ZipfSampler, build_trace,
                               probabilities_at, read_trace_csv, sample_active_set,
                               write_trace_csv, zipf_sample)
from fedsim.streams import SeededStream


def zeta_partial_sum(a: float, terms: int = 1_500_000) -> float:
    """Independent zeta oracle: plain partial sum, tail below 1e-12 for a >= 3."""
    k = np.arange(1, terms + 1, dtype=float)
    return float(np.sum(k ** -a))


def test_static_process_returns_fixed_vector():
    proc = StaticLinkProcess([1.0, 1.0, 1.0])
    p = probabilities_at(proc, 17, SeededStream(3).child("links"))
    assert np.array_equal(p, np.ones(3))


def test_zipf_rank_one_probability_matches_zeta():
    z3 = zeta_partial_sum(3.0)
    assert z3 == pytest.approx(1.2020569, abs=1e-6)
    from scipy.special import zeta as scipy_zeta
    assert z3 == pytest.approx(float(scipy_zeta(3.0, 1)), abs=1e-12)
    assert 1.0 / z3 == pytest.approx(0.831907, abs=1e-5)
    sampler = ZipfSampler(3.0)
    gen = SeededStream(11).child("zipf").generator()
    draws = sampler.sample(gen, 1_000_000)
    frac1 = np.mean(draws == 1)
    frac2 = np.mean(draws == 2)
    assert frac1 == pytest.approx(1.0 / z3, abs=2e-3)
    assert frac2 == pytest.approx(2.0 ** -3 / z3, abs=2e-3)
    assert draws.min() >= 1


def test_zipf_sample_single_draw_and_validation():
    assert zipf_sample(3.0, SeededStream(5).child("one")) >= 1
    with pytest.raises(ConfigError):
        ZipfSampler(1.0)
    with pytest.raises(ConfigError):
        ZipfSampler(0.5)


def test_zipf_small_exponent_table_capacity_rejected():
    # The 1e-12 tail cutoff would need an astronomically large table.
    with pytest.raises(ConfigError):
        ZipfSampler(1.5)


def test_zipf_count_process_respects_floor_and_cap():
    proc = ZipfCountLinkProcess(a=3.0, n=20000, floor=0.1, m=150)
    stream = SeededStream(21).child("links")
    for t in (0, 3, 11):
        p = proc.probabilities_at(t, stream)
        assert p.shape == (150,)
        assert np.all(p >= 0.1) and np.all(p <= 1.0)


def test_zipf_count_rounds_are_independent():
    proc = ZipfCountLinkProcess(a=3.0, n=2000, floor=0.1, m=10)
    stream = SeededStream(33).child("links")
    series = np.array([proc.probabilities_at(t, stream)[0] for t in range(10_000)])
    # lag-1 autocorrelation of the first client's probability
    x = series - series.mean()
    autocorr = float(np.dot(x[:-1], x[1:]) / np.dot(x, x))
    assert abs(autocorr) < 0.03


def test_zipf_process_config_errors():
    with pytest.raises(ConfigError):
        ZipfCountLinkProcess(a=0.9, n=100, floor=0.1, m=5)
    with pytest.raises(ConfigError):
        ZipfCountLinkProcess(a=3.0, n=100, floor=0.1, m=0)


def test_sample_active_set_degenerate_probabilities():
    s = SeededStream(1).child("links")
    assert sample_active_set(np.array([1.0, 1.0, 1.0]), 0, s).members == (0, 1, 2)
    assert sample_active_set(np.array([0.0, 0.0]), 1, s).members == ()


def test_sample_active_set_is_deterministic_per_round():
    a = sample_active_set(np.array([0.4, 0.6]), 9, SeededStream(8).child("links"))
    b = sample_active_set(np.array([0.4, 0.6]), 9, SeededStream(8).child("links"))
    assert a == b


def test_single_active_probability_half_half():
    # P(|A| = 1) = 0.5 for p = (0.5, 0.5); binomial CI at 1e5 trials.
    stream = SeededStream(77).child("links")
    p = np.array([0.5, 0.5])
    hits = sum(len(sample_active_set(p, t, stream)) == 1 for t in range(100_000))
    assert hits / 100_000 == pytest.approx(0.5, abs=0.01)


def test_activation_frequency_matches_probabilities():
    p = np.array([0.15, 0.5, 0.9])
    T = 20_000
    stream = SeededStream(55).child("links")
    counts = np.zeros(3)
    for t in range(T):
        counts[list(sample_active_set(p, t, stream).members)] += 1
    freq = counts / T
    sigma = np.sqrt(p * (1 - p) / T)
    assert np.all(np.abs(freq - p) <= 3 * sigma)


def test_active_set_validation():
    with pytest.raises(ValueError):
        ActiveSet(0, (2, 1))
    with pytest.raises(ValueError):
        ActiveSet(0, (1, 1))
    assert len(ActiveSet(0, ())) == 0


def test_trace_roundtrip(tmp_path):
    proc = StaticLinkProcess([0.3, 0.8])
    trace = build_trace(proc, 7, SeededStream(14).child("links"))
    path = tmp_path / "trace.csv"
    write_trace_csv(path, trace)
    back = read_trace_csv(path)
    assert len(back) == 7
    for orig, loaded in zip(trace, back):
        assert loaded.round == orig.round
        assert np.array_equal(loaded.p, orig.p)
        assert loaded.active.members == orig.active.members


def test_uniform_process_floor():
    proc = UniformLinkProcess(0.25, 4)
    assert proc.floor == 0.25
    assert StaticLinkProcess([0.5, 0.2]).floor == 0.2
