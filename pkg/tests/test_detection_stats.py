import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import enumerate_by_max, enumerate_joint, exact_mp, noise_margin_mp
from qkdsync.detection_stats import (
    CountStatistics,
    SeriesControl,
    detection_prob_approx,
    detection_prob_exact,
    mean_dark_counts,
    mean_window_counts,
    noise_margin_probability,
)
from qkdsync.errors import ConfigurationError, PrecisionError

REF_NW = 524_288


def ref_stats(n, rate, ns):
    return CountStatistics.from_physical(REF_NW, n, rate, 2.0, ns)


def test_mean_dark_counts_examples():
    assert mean_dark_counts(256, 5, 2) == pytest.approx(2.56e-6, rel=1e-12)
    assert mean_dark_counts(1024, 25, 2) == pytest.approx(5.12e-5, rel=1e-12)
    assert mean_dark_counts(77, 0, 2) == 0


def test_mean_window_counts_examples():
    assert mean_window_counts(2.56e-6, 256, 0.001) == pytest.approx(0.256, rel=1e-4)
    assert mean_window_counts(1.024e-5, 1024, 0.001) == pytest.approx(1.024, rel=1e-4)
    assert mean_window_counts(0, 10, 0) == 0


def test_count_statistics_consistency_checked():
    s = ref_stats(256, 5, 0.001)
    assert s.mean_signal_window_counts == pytest.approx(2.56e-6 + 0.256)
    with pytest.raises(ConfigurationError):
        CountStatistics(16, 0.1, 0.5, sample_size=10, dcp_rate_hz=5, window_width_ns=2)
    with pytest.raises(ConfigurationError):
        CountStatistics(1, 0.1, 0.5)
    with pytest.raises(ConfigurationError):
        CountStatistics(16, -0.1, 0.5)


def test_series_control_bounds():
    assert SeriesControl().tail_epsilon <= 1e-10
    with pytest.raises(ConfigurationError):
        SeriesControl(max_terms=8)


def test_noise_margin_examples():
    assert noise_margin_probability(3, 0.0, 1000) == 1.0
    assert noise_margin_probability(1, 0.5, 3) == pytest.approx(math.exp(-0.5) ** 2, rel=1e-14)
    got = noise_margin_probability(2, 2.56e-6, REF_NW)
    assert got == pytest.approx(1.0, abs=1e-5)
    assert got == pytest.approx(noise_margin_mp(2, 2.56e-6, REF_NW), rel=1e-12)


@given(st.integers(1, 12), st.floats(min_value=0, max_value=5), st.integers(2, 10**6))
def test_noise_margin_matches_high_precision(n_w, nd, windows):
    assert noise_margin_probability(n_w, nd, windows) == pytest.approx(
        noise_margin_mp(n_w, nd, windows), rel=1e-9, abs=1e-300
    )


@given(st.integers(1, 10), st.floats(min_value=0, max_value=3), st.integers(2, 5000))
def test_noise_margin_monotone(n_w, nd, windows):
    p = noise_margin_probability(n_w, nd, windows)
    assert 0.0 <= p <= 1.0
    assert noise_margin_probability(n_w + 1, nd, windows) >= p
    assert noise_margin_probability(n_w, nd, windows + 1) <= p


def test_exact_zero_signal_is_zero():
    r = detection_prob_exact(CountStatistics(16, 0.3, 0.0))
    assert r.probability == 0.0 and r.terms == 0


def test_exact_matches_enumeration_example():
    got = detection_prob_exact(CountStatistics(4, 0.1, 0.5)).probability
    assert got == pytest.approx(enumerate_joint(4, 0.1, 0.5), abs=1e-8)


def test_joint_oracles_agree():
    for windows, nd, nw in [(2, 0.5, 1.0), (3, 1.5, 0.3), (4, 2.0, 2.0)]:
        assert enumerate_joint(windows, nd, nw) == pytest.approx(enumerate_by_max(windows, nd, nw), abs=1e-14)


GRID_MEANS = [0.0, 0.1, 0.5, 1.0, 2.0]


@pytest.mark.parametrize("windows", [2, 3, 4, 5, 6])
def test_exact_matches_oracle_grid(windows):
    oracle = enumerate_joint if windows <= 4 else enumerate_by_max
    for nd, nw in itertools.product(GRID_MEANS, GRID_MEANS):
        got = detection_prob_exact(CountStatistics(windows, nd, nw)).probability
        assert got == pytest.approx(oracle(windows, nd, nw), abs=1e-8), (windows, nd, nw)


def test_exact_reports_truncation():
    r = detection_prob_exact(CountStatistics(REF_NW, 2.56e-6, 0.256))
    assert r.tail_bound < 1e-10
    assert r.terms >= 1
    assert r.probability == pytest.approx(exact_mp(REF_NW, 2.56e-6, 0.256), abs=1e-10)


def test_exact_precision_failure_carries_partial_sum():
    with pytest.raises(PrecisionError) as info:
        detection_prob_exact(CountStatistics(8, 1.0, 100.0), SeriesControl(max_terms=16))
    assert 0.0 <= info.value.partial_sum < 1e-10
    assert info.value.tail_bound > 0.9


@given(st.floats(min_value=0, max_value=2))
def test_degenerate_two_windows_no_dark(nw):
    got = detection_prob_exact(CountStatistics(2, 0.0, nw)).probability
    assert got == pytest.approx(-math.expm1(-nw), abs=1e-10)


@pytest.mark.parametrize("windows", [2, 16, 1024])
def test_exact_monotone_on_grid(windows):
    dark = np.linspace(0, 0.1, 6)
    signal = np.linspace(0, 2, 6)
    # rows: dark mean; columns: N * n_s added on top of the dark counts
    by_signal = np.array([
        [detection_prob_exact(CountStatistics(windows, nd, nd + s)).probability for s in signal]
        for nd in dark
    ])
    assert np.all((by_signal >= 0) & (by_signal <= 1))
    assert np.all(np.diff(by_signal, axis=1) >= -1e-12)
    # with the signal-window mean held, extra dark counts only raise the noise floor
    window_means = signal + 0.1
    by_dark = np.array([
        [detection_prob_exact(CountStatistics(windows, nd, nw)).probability for nw in window_means]
        for nd in dark
    ])
    assert np.all(np.diff(by_dark, axis=0) <= 1e-12)


def test_dark_counts_can_help_when_signal_mean_is_held_per_pulse():
    # n_s = 0: the only way to win is a dark count in the signal window
    no_signal = [detection_prob_exact(CountStatistics(16, nd, nd)).probability for nd in (0.0, 0.02, 0.04)]
    assert no_signal[0] == 0.0 < no_signal[1] < no_signal[2]


@given(st.integers(2, 10**6), st.floats(min_value=0, max_value=1), st.floats(min_value=0, max_value=50))
@settings(max_examples=60)
def test_exact_and_approx_in_unit_interval(windows, nd, extra):
    stats = CountStatistics(windows, nd, nd + extra)
    assert 0.0 <= detection_prob_exact(stats).probability <= 1.0
    assert 0.0 <= detection_prob_approx(stats).probability <= 1.0


@pytest.mark.parametrize("n,rate,ns,expected,tol", [
    (256, 5, 0.001, 0.0795, 0.0005),
    (1024, 5, 0.001, 0.275, 0.002),
    (1024, 25, 0.01, 0.9989, 0.0005),
])
def test_approx_reproduces_worked_values(n, rate, ns, expected, tol):
    assert detection_prob_approx(ref_stats(n, rate, ns)).probability == pytest.approx(expected, abs=tol)


def test_approx_regime_flag():
    assert not detection_prob_approx(ref_stats(256, 5, 0.001)).outside_regime
    assert detection_prob_approx(ref_stats(1024, 25, 0.01)).outside_regime


def test_exact_vs_approx_at_first_worked_set():
    stats = ref_stats(256, 5, 0.001)
    exact = detection_prob_exact(stats).probability
    approx = detection_prob_approx(stats).probability
    assert abs(exact - approx) / exact <= 2e-4


def test_exact_vs_approx_gap_sweep_is_finite():
    # gap is reported for the weak-signal sweep, not bounded
    for nw in np.linspace(0.01, 0.3, 8):
        stats = CountStatistics(REF_NW, 2.56e-6, nw)
        exact = detection_prob_exact(stats).probability
        gap = abs(exact - detection_prob_approx(stats).probability) / exact
        assert math.isfinite(gap)
