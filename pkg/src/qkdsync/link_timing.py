"""Link propagation, frame geometry and attenuation for the sync phase.

All durations carry their unit in the name. Values are returned unrounded;
the worked design example in the docs rounds intermediate figures by hand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigurationError, CriterionError

C_OPT_KM_S = 300_000.0
C_PHYSICAL_KM_S = 299_792.458

# window width must lie within [2, 4] pulse widths for a compliant plan
CRITERION_MIN = 2.0
CRITERION_MAX = 4.0


@dataclass(frozen=True)
class FiberLink:
    length_km: float
    refractive_index: float
    loss_db: float = 0.0

    def __post_init__(self):
        if not self.length_km > 0:
            raise ConfigurationError(f"length_km must be > 0, got {self.length_km}")
        if not self.refractive_index > 1:
            raise ConfigurationError(
                f"refractive_index must be > 1, got {self.refractive_index}"
            )
        if not self.loss_db >= 0:
            raise ConfigurationError(f"loss_db must be >= 0, got {self.loss_db}")


@dataclass(frozen=True)
class TimingPlan:
    """Frame/window geometry of the search.

    Use :meth:`build` to derive the period and rate from the window count.
    """

    pulse_width_ns: float
    window_width_ns: float
    windows_per_frame: int
    frame_period_ns: float
    pulse_rate_hz: float
    sample_size: int
    criterion_compliant: bool = True

    def __post_init__(self):
        if not (self.pulse_width_ns > 0 and self.window_width_ns > 0):
            raise ConfigurationError("pulse and window widths must be positive")
        if self.windows_per_frame < 1 or self.sample_size < 1:
            raise ConfigurationError("windows_per_frame and sample_size must be >= 1")
        expected = self.windows_per_frame * self.window_width_ns
        if not math.isclose(self.frame_period_ns, expected, rel_tol=1e-12):
            raise ConfigurationError(
                f"frame_period_ns {self.frame_period_ns} != N_w * tau_w = {expected}"
            )
        if not math.isclose(self.pulse_rate_hz, 1e9 / self.frame_period_ns, rel_tol=1e-9):
            raise ConfigurationError("pulse_rate_hz inconsistent with frame_period_ns")
        if self.criterion_compliant:
            check_window_criterion(self.pulse_width_ns, self.window_width_ns)
        if self.windows_per_frame > 1 and not self.window_width_ns < self.frame_period_ns:
            raise ConfigurationError("window must be shorter than the frame")

    @classmethod
    def build(
        cls,
        pulse_width_ns: float,
        window_width_ns: float,
        windows_per_frame: int,
        sample_size: int,
        criterion_compliant: bool = True,
    ) -> "TimingPlan":
        period = windows_per_frame * window_width_ns
        return cls(
            pulse_width_ns=pulse_width_ns,
            window_width_ns=window_width_ns,
            windows_per_frame=windows_per_frame,
            frame_period_ns=period,
            pulse_rate_hz=1e9 / period,
            sample_size=sample_size,
            criterion_compliant=criterion_compliant,
        )


def check_window_criterion(pulse_width_ns: float, window_width_ns: float) -> None:
    ratio = window_width_ns / pulse_width_ns
    # tolerate float noise at the endpoints (e.g. 3 * 0.1 / 0.1)
    if ratio < CRITERION_MIN - 1e-12 or ratio > CRITERION_MAX + 1e-12:
        raise CriterionError(
            f"window/pulse ratio {ratio:g} outside [{CRITERION_MIN:g}, {CRITERION_MAX:g}]"
        )


def window_width_for(pulse_width_ns: float, multiplier: float, enforce: bool = True) -> float:
    """Window width as a multiple of the pulse width."""
    width = pulse_width_ns * multiplier
    if enforce:
        check_window_criterion(pulse_width_ns, width)
    return width


def propagation_speed(refractive_index: float, physical_c: bool = False) -> float:
    """Group speed in the fiber core, km/s.

    The default light speed is the rounded 300 000 km/s used in hand design
    calculations; ``physical_c`` switches to the exact SI value.
    """
    if refractive_index < 1:
        raise ConfigurationError(f"refractive_index must be >= 1, got {refractive_index}")
    c = C_PHYSICAL_KM_S if physical_c else C_OPT_KM_S
    return c / refractive_index


def min_frame_period(link: FiberLink, speed_km_s: float) -> float:
    """Round-trip time Bob -> Alice -> Bob in microseconds.

    A shorter pulse period would overlap outgoing and returning pulses.
    """
    if not speed_km_s > 0:
        raise ConfigurationError("speed must be positive")
    return 2.0 * link.length_km / speed_km_s * 1e6


def nominal_frame_period(min_period_us: float) -> float:
    """Round a minimum period up to one significant digit (978 us -> 1000 us)."""
    if not min_period_us > 0:
        raise ConfigurationError("min_period_us must be positive")
    scale = 10.0 ** math.floor(math.log10(min_period_us))
    return math.ceil(_snap(min_period_us / scale)) * scale


@dataclass(frozen=True)
class FramePlan:
    raw_windows: int
    windows_per_frame: int
    frame_period_ns: float
    pulse_rate_hz: float
    growth_ratio: float  # frame_period / requested period


def _snap(x: float, rel: float = 1e-9) -> float:
    r = round(x)
    return float(r) if abs(x - r) <= rel * max(1.0, abs(x)) else x


def next_power_of_two(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def plan_frame(
    min_period_us: float, window_width_ns: float, round_to_power_of_two: bool = True
) -> FramePlan:
    """Number of windows covering ``min_period_us`` and the resulting frame.

    Power-of-two rounding always rounds up so the frame never gets shorter
    than the requested period.
    """
    if not (min_period_us > 0 and window_width_ns > 0):
        raise ConfigurationError("min_period_us and window_width_ns must be positive")
    raw = int(math.ceil(_snap(min_period_us * 1e3 / window_width_ns)))
    n_w = next_power_of_two(raw) if round_to_power_of_two else raw
    period = n_w * window_width_ns
    return FramePlan(
        raw_windows=raw,
        windows_per_frame=n_w,
        frame_period_ns=period,
        pulse_rate_hz=1e9 / period,
        growth_ratio=period / (min_period_us * 1e3),
    )


def mean_signal_level(source_mean_photons: float, loss_db: float) -> float:
    """Mean photoelectrons per pulse after ``loss_db`` of attenuation."""
    if source_mean_photons < 0 or loss_db < 0:
        raise ConfigurationError("source mean and loss must be nonnegative")
    return source_mean_photons * 10.0 ** (-loss_db / 10.0)


def total_sync_time(sample_size: float, frame_period_ms: float, cycles: float = 1) -> float:
    """Duration of one full search pass in ms: N frames per window, N_c cycles."""
    if sample_size <= 0 or frame_period_ms <= 0 or cycles <= 0:
        raise ConfigurationError("sample_size, frame_period_ms and cycles must be positive")
    return sample_size * frame_period_ms * cycles
