"""Monte Carlo model of the two-stage signal-window search.

Stage 1 gates every window of the frame over ``sample_size`` frames and
takes the window with the most counts. Stage 2 splits the three windows
around the stage-1 result into fine subintervals and repeats the argmax.

Noise windows are iid, so a trial only materialises the windows that
register at least one count. Every trial draws from its own counter-based
stream keyed by ``(master_seed, trial_index)``; results therefore do not
depend on how trials are split across workers.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .detection_stats import CountStatistics, detection_prob_exact
from .errors import ConfigurationError
from .link_timing import TimingPlan
from .spad_model import (
    CycleSchedule,
    DetectorMode,
    DetectorParams,
    blind_windows,
    build_cycle_schedule,
)

_SEED_MASK = (1 << 64) - 1
Z95 = 1.959963984540054

STAGE1_STREAM = 0
STAGE2_STREAM = 1


def _philox_state(master_seed: int, trial_index: int, stream: int) -> dict:
    return {
        "bit_generator": "Philox",
        "state": {
            "counter": np.array([0, 0, trial_index, stream], dtype=np.uint64),
            "key": np.array([master_seed & _SEED_MASK, 0], dtype=np.uint64),
        },
        "buffer": np.zeros(4, dtype=np.uint64),
        "buffer_pos": 4,
        "has_uint32": 0,
        "uinteger": 0,
    }


def trial_rng(master_seed: int, trial_index: int, stream: int = STAGE1_STREAM) -> np.random.Generator:
    """Independent generator for one trial; the trial index sits in the Philox counter."""
    bg = np.random.Philox()
    bg.state = _philox_state(master_seed, trial_index, stream)
    return np.random.Generator(bg)


class TrialStreams:
    """Reusable generator repositioned per trial; same draws as :func:`trial_rng`."""

    def __init__(self, master_seed: int, stream: int = STAGE1_STREAM):
        self.master_seed = master_seed
        self.stream = stream
        self._bg = np.random.Philox()
        self._gen = np.random.Generator(self._bg)

    def __call__(self, trial_index: int) -> np.random.Generator:
        self._bg.state = _philox_state(self.master_seed, trial_index, self.stream)
        return self._gen


class ScanMode(str, enum.Enum):
    IDEAL = "ideal"  # every window gated every frame, recovery ignored
    SCHEDULED = "scheduled"  # strided cycles, gates never fall in dead time
    NAIVE = "naive"  # every window in sequence; a registration blinds the next windows

    @classmethod
    def parse(cls, value):
        try:
            return cls(str(value).strip().lower()) if not isinstance(value, cls) else value
        except ValueError:
            raise ConfigurationError(
                f"unknown scan mode {value!r}; expected ideal, scheduled or naive"
            ) from None


@dataclass(frozen=True)
class Contained:
    """Pulse fully inside one window; ``offset_ns`` defaults to centred."""

    signal_window: int
    offset_ns: float | None = None


@dataclass(frozen=True)
class Straddling:
    first_window: int
    fraction_in_first: float

    def __post_init__(self):
        if not 0.0 < self.fraction_in_first < 1.0:
            raise ConfigurationError("fraction_in_first must lie strictly in (0, 1)")


Placement = Contained | Straddling

UNIFORM = "uniform"  # placement drawn per trial, pulse start uniform over the frame


@dataclass(frozen=True)
class Stage2Config:
    intervals: int = 3
    subintervals_per_interval: int = 17
    samples_per_subinterval: int = 800

    def __post_init__(self):
        if self.intervals < 1 or self.intervals % 2 == 0:
            raise ConfigurationError("stage-2 interval count must be odd")
        if self.subintervals_per_interval < 1 or self.samples_per_subinterval < 1:
            raise ConfigurationError("stage-2 subdivision and sample counts must be >= 1")

    @property
    def total_subintervals(self) -> int:
        return self.intervals * self.subintervals_per_interval


@dataclass(frozen=True)
class ScenarioConfig:
    timing: TimingPlan
    detector: DetectorParams
    mean_signal_per_pulse: float
    trials: int = 1000
    master_seed: int = 0
    placement: Placement | str = field(default_factory=lambda: Contained(0))
    scan: ScanMode = ScanMode.IDEAL
    schedule: CycleSchedule | None = None
    stage2: Stage2Config = field(default_factory=Stage2Config)

    def __post_init__(self):
        object.__setattr__(self, "scan", ScanMode.parse(self.scan))
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.mean_signal_per_pulse < 0:
            raise ConfigurationError("mean_signal_per_pulse must be >= 0")
        n_w = self.timing.windows_per_frame
        if n_w < 2:
            raise ConfigurationError("need at least two windows per frame")
        if self.placement == UNIFORM:
            if self.timing.pulse_width_ns > self.timing.window_width_ns:
                raise ConfigurationError("uniform placement needs pulse_width <= window_width")
        elif isinstance(self.placement, Contained):
            if not 0 <= self.placement.signal_window < n_w:
                raise ConfigurationError("signal window out of range")
        elif isinstance(self.placement, Straddling):
            if not 0 <= self.placement.first_window < n_w:
                raise ConfigurationError("straddling window out of range")
        else:
            raise ConfigurationError(f"unknown placement {self.placement!r}")
        if self.scan is ScanMode.SCHEDULED and self.schedule is None:
            sched = build_cycle_schedule(
                n_w, self.timing.window_width_ns, self.detector.dead_time_ns
            )
            object.__setattr__(self, "schedule", sched)
        if self.schedule is not None and self.schedule.windows_per_frame != n_w:
            raise ConfigurationError("schedule built for a different window count")

    @classmethod
    def from_means(
        cls,
        windows_per_frame: int,
        sample_size: int,
        mean_dark: float,
        mean_signal_total: float,
        window_width_ns: float = 2.0,
        mode: DetectorMode | str = DetectorMode.IDEAL,
        dead_time_ns: float = 0.0,
        **kwargs,
    ) -> "ScenarioConfig":
        """Scenario from accumulated means (n_d per noise window, N * n_s)."""
        mode = DetectorMode.parse(mode)
        if mode is DetectorMode.GEIGER and dead_time_ns == 0.0:
            dead_time_ns = window_width_ns
        timing = TimingPlan.build(
            pulse_width_ns=window_width_ns / 2,
            window_width_ns=window_width_ns,
            windows_per_frame=windows_per_frame,
            sample_size=sample_size,
        )
        rate = mean_dark / (sample_size * window_width_ns * 1e-9)
        return cls(
            timing=timing,
            detector=DetectorParams(dcp_rate_hz=rate, dead_time_ns=dead_time_ns, mode=mode),
            mean_signal_per_pulse=mean_signal_total / sample_size,
            **kwargs,
        )

    @property
    def dark_mean_per_gate(self) -> float:
        return self.detector.dcp_rate_hz * self.timing.window_width_ns * 1e-9

    @property
    def cycles(self) -> int:
        return self.schedule.cycles if self.schedule is not None else 1

    def count_statistics(self) -> CountStatistics:
        return CountStatistics.from_physical(
            windows_per_frame=self.timing.windows_per_frame,
            sample_size=self.timing.sample_size,
            dcp_rate_hz=self.detector.dcp_rate_hz,
            window_width_ns=self.timing.window_width_ns,
            mean_signal_per_pulse=self.mean_signal_per_pulse,
        )


@dataclass(frozen=True)
class TrialOutcome:
    decided_window: int | None  # None means no window registered anything
    correct: bool
    signal_window_count: int
    max_noise_count: int
    tie_occurred: bool
    placement: Placement


@dataclass(frozen=True)
class SimulationReport:
    estimated_p_d: float
    confidence_interval_95: tuple[float, float]
    trials: int
    successes: int
    analytic_p_d: float | None
    simulated_elapsed_model_time_ms: float
    standard_error: float
    ci_method: str = "wald+cc"
    ci_degenerate: bool = False
    detector: str = ""
    scan: str = ""


# -- placement geometry ------------------------------------------------------


def signal_windows(placement: Placement, windows_per_frame: int) -> tuple[int, ...]:
    if isinstance(placement, Contained):
        return (placement.signal_window,)
    return (placement.first_window, (placement.first_window + 1) % windows_per_frame)


def pulse_start_ns(placement: Placement, timing: TimingPlan) -> float:
    tw, ts = timing.window_width_ns, timing.pulse_width_ns
    if isinstance(placement, Contained):
        offset = (tw - ts) / 2 if placement.offset_ns is None else placement.offset_ns
        start = placement.signal_window * tw + offset
    else:
        start = (placement.first_window + 1) * tw - placement.fraction_in_first * ts
    return start % timing.frame_period_ns


def draw_placement(timing: TimingPlan, rng: np.random.Generator) -> Placement:
    """Uniform pulse start over the frame, classified as contained or straddling."""
    tw, ts = timing.window_width_ns, timing.pulse_width_ns
    window = int(rng.integers(timing.windows_per_frame))
    offset = rng.random() * tw
    if offset + ts <= tw:
        return Contained(window, offset)
    return Straddling(window, (tw - offset) / ts)


def _signal_means(config: ScenarioConfig, placement: Placement) -> list[float]:
    ns, dark = config.mean_signal_per_pulse, config.dark_mean_per_gate
    if isinstance(placement, Contained):
        return [ns + dark]
    f = placement.fraction_in_first
    return [ns * f + dark, ns * (1 - f) + dark]


def _noise_to_window(j, sig: tuple[int, ...]) -> np.ndarray:
    """Map indices 0..M-1 over the noise windows to frame window indices."""
    s = np.sort(np.asarray(sig))
    gaps = s - np.arange(len(s))
    j = np.asarray(j, dtype=np.int64)
    return j + np.searchsorted(gaps, j, side="right")


def _tally(j, sig: tuple[int, ...]) -> dict[int, int]:
    """Counts per frame window from a sequence of noise-window hits."""
    out: dict[int, int] = {}
    for w in _noise_to_window(j, sig).tolist():
        out[w] = out.get(w, 0) + 1
    return out


# -- count generation --------------------------------------------------------


# below this many noise windows (or above this accumulated dark mean) draw
# every window explicitly instead of only the nonzero ones
_DENSE_WINDOWS = 64
_DENSE_MEAN = 1 / 32


def _sample_counts(config: ScenarioConfig, placement: Placement, rng: np.random.Generator):
    """Accumulated counts as (per-signal-window list, {noise window: count})."""
    n_w = config.timing.windows_per_frame
    n = config.timing.sample_size
    sig = signal_windows(placement, n_w)
    m = n_w - len(sig)
    dark = config.dark_mean_per_gate
    lam_sig = _signal_means(config, placement)
    geiger = config.detector.mode is DetectorMode.GEIGER

    if geiger and config.scan is ScanMode.NAIVE:
        return _sample_naive(config, sig, m, dark, lam_sig, rng)

    dense = m <= _DENSE_WINDOWS or n * dark > _DENSE_MEAN
    if geiger:
        p_dark = -math.expm1(-dark)
        sig_counts = [int(rng.binomial(n, -math.expm1(-lam))) for lam in lam_sig]
        if dense:
            counts = rng.binomial(n, p_dark, size=m)
        else:
            k = int(rng.binomial(n * m, p_dark))
            if k == 0:
                return sig_counts, {}
            cells = rng.choice(n * m, size=k, replace=False) if k > 1 else rng.integers(n * m, size=1)
            return sig_counts, _tally(cells % m, sig)
    else:
        sig_counts = [int(rng.poisson(n * lam)) for lam in lam_sig]
        if dense:
            counts = rng.poisson(n * dark, size=m)
        else:
            k = int(rng.poisson(n * m * dark))
            if k == 0:
                return sig_counts, {}
            return sig_counts, _tally(rng.integers(0, m, size=k), sig)
    j = np.flatnonzero(counts)
    return sig_counts, dict(zip(_noise_to_window(j, sig).tolist(), counts[j].tolist()))


def _sample_naive(config, sig, m, dark, lam_sig, rng):
    """Geiger detector gating every window in order; no schedule.

    After a registration the following ``blind`` windows of the same frame
    register nothing, whatever arrives in them.
    """
    n = config.timing.sample_size
    blind = blind_windows(config.detector.dead_time_ns, config.timing.window_width_ns)
    k_noise = rng.binomial(m, -math.expm1(-dark), size=n)
    sig_fired = rng.random((n, len(sig))) < -np.expm1(-np.asarray(lam_sig))
    tally: dict[int, int] = {}
    for frame in np.flatnonzero((k_noise > 0) | sig_fired.any(axis=1)).tolist():
        k = int(k_noise[frame])
        events = _noise_to_window(rng.choice(m, size=k, replace=False), sig).tolist() if k else []
        events += [w for w, fired in zip(sig, sig_fired[frame]) if fired]
        last = None
        for w in sorted(events):
            if last is None or w > last + blind:
                tally[w] = tally.get(w, 0) + 1
                last = w
    sig_counts = [tally.pop(w, 0) for w in sig]
    return sig_counts, tally


# -- decision rule -------------------------------------------------------------


def _decide(sig: tuple[int, ...], sig_counts: list[int], noise: dict[int, int]):
    best_sig = max(sig_counts)
    max_noise = max(noise.values(), default=0)
    top = max(best_sig, max_noise)
    if top == 0:
        return None, False, best_sig, max_noise, False
    leaders = [w for w, c in zip(sig, sig_counts) if c == top]
    leaders += [w for w, c in noise.items() if c == top]
    return min(leaders), best_sig > max_noise, best_sig, max_noise, len(leaders) > 1


def adjudicate(counts, placement: Placement) -> tuple[int | None, bool]:
    """Decide the signal window from accumulated per-window counts.

    The reported window is the argmax, lowest index first. Detection is
    correct when a window holding pulse energy has at least one count and
    strictly more than every noise window; two straddled windows may tie
    with each other.
    """
    counts = np.asarray(counts)
    if counts.ndim != 1 or np.any(counts < 0):
        raise ConfigurationError("counts must be a 1-d array of nonnegative integers")
    sig = signal_windows(placement, len(counts))
    mask = np.ones(len(counts), dtype=bool)
    mask[list(sig)] = False
    nz = np.flatnonzero(mask & (counts > 0))
    noise = dict(zip(nz.tolist(), counts[nz].tolist()))
    decided, correct, *_ = _decide(sig, [int(counts[w]) for w in sig], noise)
    return decided, correct


# -- stage 1 -------------------------------------------------------------------


def _stage1(config: ScenarioConfig, rng: np.random.Generator) -> TrialOutcome:
    if config.placement == UNIFORM:
        placement = draw_placement(config.timing, rng)
    else:
        placement = config.placement
    sig = signal_windows(placement, config.timing.windows_per_frame)
    sig_counts, noise = _sample_counts(config, placement, rng)
    decided, correct, best, max_noise, tie = _decide(sig, sig_counts, noise)
    return TrialOutcome(decided, correct, best, max_noise, tie, placement)


def run_stage1_trial(config: ScenarioConfig, trial_index: int) -> TrialOutcome:
    """One coarse search over all windows; deterministic in (seed, trial_index)."""
    return _stage1(config, trial_rng(config.master_seed, trial_index))


def _run_chunk(config: ScenarioConfig, start: int, stop: int) -> np.ndarray:
    streams = TrialStreams(config.master_seed)
    return np.array([_stage1(config, streams(i)).correct for i in range(start, stop)], dtype=bool)


def run_trials(config: ScenarioConfig, workers: int = 1, chunk_size: int = 5000) -> np.ndarray:
    """Correctness flag for every trial, in trial-index order."""
    bounds = [(a, min(a + chunk_size, config.trials)) for a in range(0, config.trials, chunk_size)]
    if workers <= 1 or len(bounds) == 1:
        parts = [_run_chunk(config, a, b) for a, b in bounds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [config] * len(bounds), *zip(*bounds)))
    return np.concatenate(parts)


def binomial_ci(successes: int, trials: int) -> tuple[float, float]:
    """95% normal interval with a half-count continuity correction, clipped to [0, 1]."""
    p = successes / trials
    half = Z95 * math.sqrt(p * (1 - p) / trials) + 0.5 / trials
    return max(0.0, p - half), min(1.0, p + half)


def analytic_for(config: ScenarioConfig) -> float | None:
    """Exact series value when the scenario matches its assumptions, else None."""
    if config.detector.mode is not DetectorMode.IDEAL or not isinstance(config.placement, Contained):
        return None
    return detection_prob_exact(config.count_statistics()).probability


def estimate_detection_probability(
    config: ScenarioConfig, workers: int = 1, chunk_size: int = 5000
) -> SimulationReport:
    flags = run_trials(config, workers=workers, chunk_size=chunk_size)
    successes = int(flags.sum())
    p = successes / config.trials
    t = config.timing
    return SimulationReport(
        estimated_p_d=p,
        confidence_interval_95=binomial_ci(successes, config.trials),
        trials=config.trials,
        successes=successes,
        analytic_p_d=analytic_for(config),
        simulated_elapsed_model_time_ms=t.sample_size * t.frame_period_ns * 1e-6 * config.cycles,
        standard_error=math.sqrt(p * (1 - p) / config.trials),
        ci_degenerate=config.trials < 100,
        detector=config.detector.mode.value,
        scan=config.scan.value,
    )


# -- stage 2 -------------------------------------------------------------------


def subinterval_means(config: ScenarioConfig, coarse_window: int, placement: Placement) -> np.ndarray:
    """Per-gate Poisson mean for each subinterval of the refinement span."""
    t = config.timing
    s2 = config.stage2
    n_sub = s2.total_subintervals
    width = t.window_width_ns / s2.subintervals_per_interval
    span_start = ((coarse_window - s2.intervals // 2) % t.windows_per_frame) * t.window_width_ns
    rel = (pulse_start_ns(placement, t) - span_start) % t.frame_period_ns
    edges = np.arange(n_sub + 1) * width
    overlap = np.zeros(n_sub)
    # the pulse may sit just before the span start and wrap into it
    for a in (rel, rel - t.frame_period_ns):
        lo = np.maximum(edges[:-1], a)
        hi = np.minimum(edges[1:], a + t.pulse_width_ns)
        overlap += np.clip(hi - lo, 0.0, None)
    dark = config.detector.dcp_rate_hz * width * 1e-9
    return config.mean_signal_per_pulse * overlap / t.pulse_width_ns + dark


def run_stage2_refine(
    config: ScenarioConfig,
    coarse_window: int,
    rng: np.random.Generator,
    placement: Placement | None = None,
) -> int:
    """Index (0-based over the whole span) of the busiest subinterval, lowest on ties."""
    if placement is None:
        if config.placement == UNIFORM:
            raise ConfigurationError("uniform scenarios need an explicit placement for stage 2")
        placement = config.placement
    means = subinterval_means(config, coarse_window, placement)
    samples = config.stage2.samples_per_subinterval
    if config.detector.mode is DetectorMode.GEIGER:
        counts = rng.binomial(samples, -np.expm1(-means))
    else:
        counts = rng.poisson(samples * means)
    return int(np.argmax(counts))


def true_subinterval(config: ScenarioConfig, coarse_window: int, placement: Placement) -> int:
    """Subinterval holding the pulse centre, or -1 when it lies outside the span."""
    t = config.timing
    s2 = config.stage2
    width = t.window_width_ns / s2.subintervals_per_interval
    span_start = ((coarse_window - s2.intervals // 2) % t.windows_per_frame) * t.window_width_ns
    centre = (pulse_start_ns(placement, t) + t.pulse_width_ns / 2 - span_start) % t.frame_period_ns
    idx = int(centre // width)
    return idx if idx < s2.total_subintervals else -1


def stage2_calibration(config: ScenarioConfig, trials: int, tolerance: int = 1) -> float:
    """Fraction of refinements within ``tolerance`` subintervals of the pulse centre.

    Stage 2 is started on the window holding the pulse start, so this
    isolates refinement accuracy from stage-1 failures.
    """
    hits = 0
    for i in range(trials):
        rng = trial_rng(config.master_seed, i, STAGE2_STREAM)
        placement = draw_placement(config.timing, rng) if config.placement == UNIFORM else config.placement
        coarse = int(pulse_start_ns(placement, config.timing) // config.timing.window_width_ns)
        got = run_stage2_refine(config, coarse, rng, placement)
        hits += abs(got - true_subinterval(config, coarse, placement)) <= tolerance
    return hits / trials
