"""Detector response per gate and the dead-time-safe gating schedule."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


class DetectorMode(str, enum.Enum):
    IDEAL = "ideal"  # counts every primary event, no recovery time
    GEIGER = "geiger"  # at most one registration per gate, then dead time

    @classmethod
    def parse(cls, value: "str | DetectorMode") -> "DetectorMode":
        if isinstance(value, cls):
            return value
        aliases = {"idealcounter": cls.IDEAL, "geigergated": cls.GEIGER}
        key = str(value).strip().lower()
        try:
            return aliases.get(key) or cls(key)
        except ValueError:
            raise ConfigurationError(
                f"unknown detector mode {value!r}; expected one of ideal, geiger"
            ) from None


@dataclass(frozen=True)
class DetectorParams:
    dcp_rate_hz: float
    dead_time_ns: float = 0.0
    mode: DetectorMode = DetectorMode.IDEAL

    def __post_init__(self):
        object.__setattr__(self, "mode", DetectorMode.parse(self.mode))
        if self.dcp_rate_hz < 0:
            raise ConfigurationError("dcp_rate_hz must be >= 0")
        if self.dead_time_ns < 0:
            raise ConfigurationError("dead_time_ns must be >= 0")
        if self.mode is DetectorMode.GEIGER and not self.dead_time_ns > 0:
            raise ConfigurationError("Geiger-mode detector needs dead_time_ns > 0")


@dataclass(frozen=True)
class CycleSchedule:
    """Strided gating order: cycle ``c`` (1-based) visits windows c-1, c-1+stride, ...

    Gates inside one cycle are a full module apart, so a registration's
    dead time has always expired by the next gate.
    """

    module_width_ns: float
    cycles: int
    stride_windows: int
    windows_per_cycle: int
    windows_per_frame: int
    window_width_ns: float
    dead_time_ns: float

    def cycle_windows(self, cycle: int) -> np.ndarray:
        if not 1 <= cycle <= self.cycles:
            raise IndexError(f"cycle {cycle} outside 1..{self.cycles}")
        return np.arange(cycle - 1, self.windows_per_frame, self.stride_windows, dtype=np.int64)

    def visit_order(self) -> np.ndarray:
        """All windows in gating order, cycle after cycle."""
        idx = np.arange(self.windows_per_frame, dtype=np.int64)
        return idx.reshape(self.windows_per_cycle, self.cycles).T.ravel()

    @property
    def gate_spacing_ns(self) -> float:
        return self.stride_windows * self.window_width_ns


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def build_cycle_schedule(
    windows_per_frame: int,
    window_width_ns: float,
    dead_time_ns: float,
    module_width_ns: float | None = None,
) -> CycleSchedule:
    """Pick the module length and cycle count for a detector's dead time.

    By default the module is the smallest power-of-two multiple of the
    window width that covers the dead time (64 ns for 45 ns at 2 ns windows).
    """
    if windows_per_frame < 2 or not _is_power_of_two(windows_per_frame):
        raise ConfigurationError(f"windows_per_frame must be a power of two >= 2, got {windows_per_frame}")
    if not window_width_ns > 0:
        raise ConfigurationError("window_width_ns must be positive")
    if dead_time_ns < 0:
        raise ConfigurationError("dead_time_ns must be >= 0")

    if module_width_ns is None:
        cycles = 1
        while cycles * window_width_ns < dead_time_ns * (1 - 1e-12):
            cycles *= 2
    else:
        ratio = module_width_ns / window_width_ns
        cycles = round(ratio)
        if cycles < 1 or abs(ratio - cycles) > 1e-9 * ratio:
            raise ConfigurationError("module width must be a whole number of windows")
        if module_width_ns < dead_time_ns * (1 - 1e-12):
            raise ConfigurationError(
                f"module width {module_width_ns} ns shorter than dead time {dead_time_ns} ns"
            )
    if windows_per_frame % cycles:
        raise ConfigurationError(
            f"{windows_per_frame} windows not divisible into {cycles} cycles"
        )
    return CycleSchedule(
        module_width_ns=cycles * window_width_ns,
        cycles=cycles,
        stride_windows=cycles,
        windows_per_cycle=windows_per_frame // cycles,
        windows_per_frame=windows_per_frame,
        window_width_ns=window_width_ns,
        dead_time_ns=dead_time_ns,
    )


def frame_gates(schedule: CycleSchedule, sample_size: int):
    """Yield ``(frame, windows)`` for one full pass: each cycle runs ``sample_size`` frames."""
    frame = 0
    for cycle in range(1, schedule.cycles + 1):
        windows = schedule.cycle_windows(cycle)
        for _ in range(sample_size):
            yield frame, windows
            frame += 1


@dataclass(frozen=True)
class GateDelay:
    frame_activation_index: int
    frame_sequence_index: int
    delay_ns: float

    @classmethod
    def at(cls, frame_period_ns, window_width_ns, activation_index, sequence_index) -> "GateDelay":
        delay = gating_delay(frame_period_ns, window_width_ns, activation_index, sequence_index)
        return cls(activation_index, sequence_index, delay)


def gating_delay(
    frame_period_ns: float, window_width_ns: float, activation_index: int, sequence_index: int
) -> float:
    """Strobe delay Z = T_s/4 * (A - 1) + tau_w * (B - 1), indices 1-based."""
    if activation_index < 1 or sequence_index < 1:
        raise ConfigurationError("gate indices are 1-based")
    return frame_period_ns / 4 * (activation_index - 1) + window_width_ns * (sequence_index - 1)


def blind_windows(dead_time_ns: float, window_width_ns: float) -> int:
    """Windows lost after a registration when gating every window in sequence."""
    ratio = dead_time_ns / window_width_ns
    r = round(ratio)
    return int(r if abs(ratio - r) < 1e-9 else math.floor(ratio))


def window_response(mean_counts, mode: DetectorMode, rng: np.random.Generator, size=None):
    """Counts registered in one gate given the mean number of primary events.

    Ideal counters return the Poisson count; a Geiger-mode gate returns 1 if
    any event arrived and 0 otherwise.
    """
    if np.any(np.asarray(mean_counts) < 0):
        raise ConfigurationError("mean_counts must be >= 0")
    if DetectorMode.parse(mode) is DetectorMode.IDEAL:
        return rng.poisson(mean_counts, size=size)
    p_fire = -np.expm1(-np.asarray(mean_counts, dtype=float))
    return (rng.random(size=size) < p_fire).astype(np.int64)
