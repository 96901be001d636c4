"""Analytic probability of picking the right window in the coarse search.

The signal window accumulates Poisson(n_w) counts over the sample, each of
the N_w - 1 noise windows Poisson(n_d). Detection is correct when the signal
window strictly beats every noise window. Two evaluators are provided: the
exact series over the signal count and a closed-form approximation valid
for n_w << 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import gammaln, pdtrc

from .errors import ConfigurationError, NumericRangeError, PrecisionError

# n_w above this is reported as outside the small-signal regime
APPROX_REGIME_LIMIT = 0.5


def mean_dark_counts(sample_size: int, dcp_rate_hz: float, window_width_ns: float) -> float:
    """Mean dark counts in one window accumulated over ``sample_size`` frames."""
    if sample_size < 1 or dcp_rate_hz < 0 or window_width_ns < 0:
        raise ConfigurationError("sample_size >= 1 and nonnegative rate/width required")
    return sample_size * dcp_rate_hz * window_width_ns * 1e-9


def mean_window_counts(mean_dark: float, sample_size: int, mean_signal_per_pulse: float) -> float:
    """Mean counts (photoelectrons + dark) in the signal window over the sample."""
    if mean_dark < 0 or sample_size < 1 or mean_signal_per_pulse < 0:
        raise ConfigurationError("means must be nonnegative and sample_size >= 1")
    return mean_dark + sample_size * mean_signal_per_pulse


@dataclass(frozen=True)
class CountStatistics:
    """Poisson means feeding the detection probability.

    The physical fields are optional; when present they must agree with the
    means. Build from hardware figures with :meth:`from_physical`.
    """

    windows_per_frame: int
    mean_dark_counts: float
    mean_signal_window_counts: float
    sample_size: int = 1
    mean_signal_counts_per_pulse: float | None = None
    dcp_rate_hz: float | None = None
    window_width_ns: float | None = None

    def __post_init__(self):
        if self.windows_per_frame < 2:
            raise ConfigurationError("windows_per_frame must be >= 2")
        if self.sample_size < 1:
            raise ConfigurationError("sample_size must be >= 1")
        for name in ("mean_dark_counts", "mean_signal_window_counts"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigurationError(f"{name} must be finite and >= 0, got {v}")
        if self.dcp_rate_hz is not None and self.window_width_ns is not None:
            expected = mean_dark_counts(self.sample_size, self.dcp_rate_hz, self.window_width_ns)
            if not math.isclose(self.mean_dark_counts, expected, rel_tol=1e-9, abs_tol=1e-300):
                raise ConfigurationError("mean_dark_counts != N * dcp_rate * window_width")
        if self.mean_signal_counts_per_pulse is not None:
            expected = mean_window_counts(
                self.mean_dark_counts, self.sample_size, self.mean_signal_counts_per_pulse
            )
            if not math.isclose(
                self.mean_signal_window_counts, expected, rel_tol=1e-9, abs_tol=1e-300
            ):
                raise ConfigurationError("mean_signal_window_counts != n_d + N * n_s")

    @classmethod
    def from_physical(
        cls,
        windows_per_frame: int,
        sample_size: int,
        dcp_rate_hz: float,
        window_width_ns: float,
        mean_signal_per_pulse: float,
    ) -> "CountStatistics":
        nd = mean_dark_counts(sample_size, dcp_rate_hz, window_width_ns)
        return cls(
            windows_per_frame=windows_per_frame,
            mean_dark_counts=nd,
            mean_signal_window_counts=mean_window_counts(nd, sample_size, mean_signal_per_pulse),
            sample_size=sample_size,
            mean_signal_counts_per_pulse=mean_signal_per_pulse,
            dcp_rate_hz=dcp_rate_hz,
            window_width_ns=window_width_ns,
        )


@dataclass(frozen=True)
class SeriesControl:
    tail_epsilon: float = 1e-10
    max_terms: int = 10_000

    def __post_init__(self):
        if not self.tail_epsilon > 0:
            raise ConfigurationError("tail_epsilon must be positive")
        if self.max_terms < 16:
            raise ConfigurationError("max_terms must be >= 16")


@dataclass(frozen=True)
class ExactResult:
    probability: float
    terms: int
    tail_bound: float


@dataclass(frozen=True)
class ApproxResult:
    probability: float
    outside_regime: bool  # n_w not << 1; value still returned


def _log_poisson_cdf(k: int, mean: float) -> float:
    if mean == 0.0:
        return 0.0
    if k == 0:
        return -mean
    return math.log1p(-pdtrc(k, mean))


def noise_margin_probability(n_w: int, mean_dark: float, windows_per_frame: int) -> float:
    """P(every noise window holds at most ``n_w - 1`` dark counts)."""
    if n_w < 1:
        raise ConfigurationError("n_w must be >= 1")
    if windows_per_frame < 2:
        raise ConfigurationError("windows_per_frame must be >= 2")
    return math.exp((windows_per_frame - 1) * _log_poisson_cdf(n_w - 1, mean_dark))


def detection_prob_exact(
    stats: CountStatistics, control: SeriesControl | None = None
) -> ExactResult:
    """Sum over signal counts n >= 1 of Poisson(n; n_w) * noise margin(n).

    The noise margin is at most 1, so the remaining Poisson tail of the
    signal count bounds the truncation error.
    """
    control = control or SeriesControl()
    nw = stats.mean_signal_window_counts
    nd = stats.mean_dark_counts
    if nw == 0.0:
        return ExactResult(0.0, 0, 0.0)
    log_nw = math.log(nw)
    total = 0.0
    for n in range(1, control.max_terms + 1):
        log_pmf = n * log_nw - nw - gammaln(n + 1)
        total += math.exp(log_pmf + (stats.windows_per_frame - 1) * _log_poisson_cdf(n - 1, nd))
        tail = float(pdtrc(n, nw))
        if tail < control.tail_epsilon:
            return ExactResult(min(total, 1.0), n, tail)
    raise PrecisionError(
        f"tail {tail:.3g} still above {control.tail_epsilon:g} after {control.max_terms} terms",
        partial_sum=total,
        tail_bound=tail,
        terms=control.max_terms,
    )


def detection_prob_approx(stats: CountStatistics) -> ApproxResult:
    """Closed-form detection probability for weak signals.

    P = exp(-(N_w-1) n_d) * [n_w e^-n_w + P(X_w >= 2) (1 + n_d)^(N_w-1)]

    The two large factors of the second addend are merged in log space.
    """
    nw = stats.mean_signal_window_counts
    nd = stats.mean_dark_counts
    m = stats.windows_per_frame - 1
    single = math.exp(-m * nd) * nw * math.exp(-nw)
    multi = float(pdtrc(1, nw)) * math.exp(m * (math.log1p(nd) - nd))
    p = single + multi
    if not math.isfinite(p):
        raise NumericRangeError(f"non-finite approximation for {stats}")
    if p < 0.0 or p > 1.0:
        if p < -1e-12 or p > 1.0 + 1e-12:
            raise NumericRangeError(f"approximation {p!r} outside [0, 1]")
        p = min(max(p, 0.0), 1.0)
    return ApproxResult(p, nw >= APPROX_REGIME_LIMIT)
