"""Synchronization-phase model for a two-pass fiber QKD link.

Analytic window-detection probabilities, a Monte Carlo model of the
two-stage pulse search with Geiger-mode detectors, and link timing design.
"""
from .detection_stats import (
    CountStatistics,
    SeriesControl,
    detection_prob_approx,
    detection_prob_exact,
    mean_dark_counts,
    mean_window_counts,
    noise_margin_probability,
)
from .errors import ConfigurationError, CriterionError, NumericRangeError, PrecisionError
from .link_timing import (
    FiberLink,
    TimingPlan,
    mean_signal_level,
    min_frame_period,
    plan_frame,
    propagation_speed,
    total_sync_time,
)
from .simulator import (
    Contained,
    ScenarioConfig,
    ScanMode,
    Stage2Config,
    Straddling,
    adjudicate,
    estimate_detection_probability,
    run_stage1_trial,
    run_stage2_refine,
)
from .spad_model import (
    DetectorMode,
    DetectorParams,
    build_cycle_schedule,
    gating_delay,
    window_response,
)

__version__ = "0.1.0"
