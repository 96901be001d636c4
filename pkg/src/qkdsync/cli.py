"""Command-line front end: ``qkd-sync {plan,prob,simulate,schedule,sweep}``.

Every parameter can come from a flag or from a flat ``key = value`` config
file (``--config``); flags win. Decimal commas are accepted on input.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import detection_stats as ds
from . import link_timing as lt
from .errors import ConfigurationError, PrecisionError
from .simulator import (
    UNIFORM,
    Contained,
    ScenarioConfig,
    Straddling,
    estimate_detection_probability,
)
from .spad_model import DetectorParams, build_cycle_schedule

SCHEMA_VERSION = 1
SEED_ENV = "QKD_SYNC_SEED"
EXIT_USAGE = 2
EXIT_PRECISION = 3

SWEEP_HEADER = ["parameter", "value", "p_exact", "p_approx", "rel_gap", "p_mc", "mc_ci_low", "mc_ci_high"]
SWEEP_AXES = {
    "N": "sample_size",
    "sample_size": "sample_size",
    "xi_d": "dcp_rate_hz",
    "dcp_rate_hz": "dcp_rate_hz",
    "n_s": "mean_signal",
    "mean_signal": "mean_signal",
    "N_w": "windows_per_frame",
    "windows_per_frame": "windows_per_frame",
    "loss_db": "loss_db",
}
INT_AXES = {"sample_size", "windows_per_frame"}


def parse_float(text) -> float:
    if isinstance(text, (int, float)):
        return float(text)
    s = str(text).strip()
    if "," in s and "." not in s:
        s = s.replace(",", ".")
    return float(s)


def parse_int(text) -> int:
    v = parse_float(text)
    if not v.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in {"1", "true", "yes", "on"}:
        return True
    if s in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def parse_opt_int(text):
    return None if text is None or str(text).strip().lower() in {"", "none"} else parse_int(text)


def parse_opt_float(text):
    return None if text is None or str(text).strip().lower() in {"", "none"} else parse_float(text)


# name -> (parser, default, help)
_STATS = {
    "windows_per_frame": (parse_int, 524288, "N_w, windows per frame"),
    "sample_size": (parse_int, 256, "N, frames accumulated per window"),
    "dcp_rate_hz": (parse_float, 5.0, "dark count rate, Hz"),
    "window_width_ns": (parse_float, 2.0, "window width, ns"),
    "mean_signal": (parse_float, 0.001, "mean photoelectrons per pulse at the detector"),
}
PARAMS: dict[str, dict[str, tuple]] = {
    "plan": {
        "length_km": (parse_float, 100.0, "fiber length, km"),
        "refractive_index": (parse_float, 1.467, "core refractive index"),
        "pulse_width_ns": (parse_float, 1.0, "optical pulse width, ns"),
        "window_multiplier": (parse_float, 2.0, "window width in pulse widths"),
        "window_width_ns": (parse_opt_float, None, "explicit window width (overrides multiplier)"),
        "enforce_criterion": (parse_bool, True, "require window in [2, 4] pulse widths"),
        "round_pow2": (parse_bool, True, "round window count up to a power of two"),
        "frame_period_us": (parse_opt_float, None, "nominal period (default: T_s,min rounded up)"),
        "physical_c": (parse_bool, False, "use 299792.458 km/s instead of 300000"),
        "sample_size": (parse_int, 256, "N, frames per window"),
        "source_mean": (parse_float, 0.1, "mean photons per pulse at the source"),
        "loss_db": (parse_float, 20.0, "link loss, dB"),
        "cycles": (parse_int, 1, "N_c gating cycles"),
        "dead_time_ns": (parse_opt_float, None, "derive N_c from this dead time"),
    },
    "prob": {
        **_STATS,
        "mean_dark": (parse_opt_float, None, "override accumulated dark mean n_d"),
        "mean_window": (parse_opt_float, None, "override accumulated signal-window mean n_w"),
        "tail_epsilon": (parse_float, 1e-10, "series truncation bound"),
        "max_terms": (parse_int, 10_000, "series term limit"),
    },
    "simulate": {
        **_STATS,
        "windows_per_frame": (parse_int, 4096, "N_w, windows per frame"),
        "pulse_width_ns": (parse_float, 1.0, "pulse width, ns"),
        "enforce_criterion": (parse_bool, True, "require window in [2, 4] pulse widths"),
        "mean_dark": (parse_opt_float, None, "override: accumulated dark mean per window"),
        "signal_total": (parse_opt_float, None, "override: N * mean_signal"),
        "detector": (str, "ideal", "ideal | geiger (comma list for several rows)"),
        "dead_time_ns": (parse_float, 45.0, "detector dead time, ns"),
        "scan": (str, "ideal", "ideal | scheduled | naive (comma list for several rows)"),
        "placement": (str, "contained", "contained | straddling | uniform"),
        "signal_window": (parse_opt_int, None, "signal window index (default: mid-frame)"),
        "fraction": (parse_float, 0.5, "straddling fraction in the first window"),
        "trials": (parse_int, 10_000, "Monte Carlo trials"),
        "workers": (parse_int, 1, "worker processes"),
    },
    "schedule": {
        "windows_per_frame": (parse_int, 524288, "N_w, power of two"),
        "window_width_ns": (parse_float, 2.0, "window width, ns"),
        "dead_time_ns": (parse_float, 45.0, "detector dead time, ns"),
        "module_width_ns": (parse_opt_float, None, "explicit module width"),
        "dump": (str, "", "write full visit order CSV to this path"),
    },
    "sweep": {
        **_STATS,
        "axis": (str, "N", "N | xi_d | n_s | N_w | loss_db"),
        "start": (parse_float, 256.0, "first axis value"),
        "stop": (parse_float, 1024.0, "last axis value"),
        "steps": (parse_int, 2, "number of points (>= 2)"),
        "source_mean": (parse_float, 0.1, "source mean photons (loss_db axis)"),
        "tail_epsilon": (parse_float, 1e-10, "series truncation bound"),
        "mc_trials": (parse_int, 0, "Monte Carlo trials per point (0 = none)"),
        "workers": (parse_int, 1, "worker processes"),
    },
}
SEEDED = {"simulate", "sweep"}


def read_config_file(path: str) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else (":" if ":" in line else None)
            if sep is None:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split(sep, 1))
            values[key.replace("-", "_")] = value
    return values


def resolve_params(command: str, flags: dict, file_values: dict[str, str]) -> dict:
    """Defaults, then config file, then explicit flags."""
    spec = PARAMS[command]
    valid = set(spec) | ({"seed"} if command in SEEDED else set())
    unknown = sorted(set(file_values) - valid)
    if unknown:
        raise ConfigurationError(
            f"unknown config keys {unknown}; valid keys: {', '.join(sorted(valid))}"
        )
    out = {}
    for name, (parse, default, _) in spec.items():
        raw = flags.get(name)
        if raw is None:
            raw = file_values.get(name, default)
        try:
            out[name] = parse(raw) if raw is not None else None
        except ValueError as exc:
            raise ConfigurationError(f"{name}: {exc}") from None
    if command in SEEDED:
        seed = flags.get("seed")
        if seed is None:
            seed = file_values.get("seed", os.environ.get(SEED_ENV, 0))
        try:
            out["seed"] = parse_int(seed)
        except ValueError as exc:
            raise ConfigurationError(f"seed: {exc}") from None
    return out


# -- reports -----------------------------------------------------------------


@dataclass
class Report:
    command: str
    rows: list[dict]
    columns: list[str]
    percent: set[str] = field(default_factory=set)
    notes: list[str] = field(default_factory=list)


def fmt_value(key: str, value, percent: set[str]) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        if key in percent:
            return f"{value * 100:.2f}%"
        if math.isfinite(value) and value == int(value) and abs(value) < 1e15:
            return str(int(value))
        return f"{value:.6g}"
    return str(value)


def display_rows(report: Report) -> list[dict[str, str]]:
    return [{k: fmt_value(k, row.get(k), report.percent) for k in report.columns} for row in report.rows]


def _json_safe(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def render(report: Report, fmt: str) -> str:
    if fmt == "json":
        doc = {
            "schema_version": SCHEMA_VERSION,
            "command": report.command,
            "rows": [{k: _json_safe(row.get(k)) for k in report.columns} for row in report.rows],
            "display": display_rows(report),
            "notes": report.notes,
        }
        return json.dumps(doc, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(report.columns)
        for row in report.rows:
            writer.writerow(["" if row.get(k) is None else _json_safe(row.get(k)) for k in report.columns])
        return buf.getvalue()
    shown = display_rows(report)
    lines = []
    if len(shown) == 1:
        width = max(len(k) for k in report.columns)
        lines += [f"{k.ljust(width)}  {shown[0][k]}" for k in report.columns]
    else:
        widths = {k: max(len(k), *(len(r[k]) for r in shown)) for k in report.columns}
        lines.append("  ".join(k.rjust(widths[k]) for k in report.columns))
        lines += ["  ".join(r[k].rjust(widths[k]) for k in report.columns) for r in shown]
    lines += [f"note: {n}" for n in report.notes]
    return "\n".join(lines) + "\n"


# -- commands ----------------------------------------------------------------


def cmd_plan(p: dict) -> Report:
    link = lt.FiberLink(p["length_km"], p["refractive_index"], p["loss_db"])
    speed = lt.propagation_speed(link.refractive_index, physical_c=p["physical_c"])
    t_min = lt.min_frame_period(link, speed)
    nominal = p["frame_period_us"] or lt.nominal_frame_period(t_min)
    if nominal < t_min:
        raise ConfigurationError(f"frame period {nominal} us below round-trip minimum {t_min:.6g} us")
    if p["window_width_ns"] is not None:
        tau_w = p["window_width_ns"]
        if p["enforce_criterion"]:
            lt.check_window_criterion(p["pulse_width_ns"], tau_w)
    else:
        tau_w = lt.window_width_for(p["pulse_width_ns"], p["window_multiplier"], p["enforce_criterion"])
    frame = lt.plan_frame(nominal, tau_w, p["round_pow2"])
    plan = lt.TimingPlan.build(
        p["pulse_width_ns"], tau_w, frame.windows_per_frame, p["sample_size"], p["enforce_criterion"]
    )
    cycles = p["cycles"]
    if p["dead_time_ns"] is not None:
        cycles = build_cycle_schedule(plan.windows_per_frame, tau_w, p["dead_time_ns"]).cycles
    row = {
        "v_fiber_km_s": speed,
        "t_s_min_us": t_min,
        "nominal_period_us": nominal,
        "window_width_ns": tau_w,
        "n_w_raw": frame.raw_windows,
        "n_w": plan.windows_per_frame,
        "t_s_ns": plan.frame_period_ns,
        "f_s_hz": plan.pulse_rate_hz,
        "frame_growth_pct": (frame.growth_ratio - 1) * 100,
        "mean_signal": lt.mean_signal_level(p["source_mean"], link.loss_db),
        "sample_size": plan.sample_size,
        "cycles": cycles,
        "total_sync_time_ms": lt.total_sync_time(plan.sample_size, plan.frame_period_ns * 1e-6, cycles),
    }
    return Report("plan", [row], list(row))


def _stats_from(p: dict) -> ds.CountStatistics:
    if p.get("mean_dark") is not None or p.get("mean_window") is not None:
        nd = p["mean_dark"] if p.get("mean_dark") is not None else ds.mean_dark_counts(
            p["sample_size"], p["dcp_rate_hz"], p["window_width_ns"]
        )
        nw = p["mean_window"] if p.get("mean_window") is not None else ds.mean_window_counts(
            nd, p["sample_size"], p["mean_signal"]
        )
        return ds.CountStatistics(p["windows_per_frame"], nd, nw, p["sample_size"])
    return ds.CountStatistics.from_physical(
        p["windows_per_frame"], p["sample_size"], p["dcp_rate_hz"], p["window_width_ns"], p["mean_signal"]
    )


def _rel_gap(exact: float, approx: float) -> float | None:
    return abs(exact - approx) / exact if exact > 0 else None


def cmd_prob(p: dict) -> Report:
    stats = _stats_from(p)
    exact = ds.detection_prob_exact(stats, ds.SeriesControl(p["tail_epsilon"], p["max_terms"]))
    approx = ds.detection_prob_approx(stats)
    row = {
        "n_d": stats.mean_dark_counts,
        "n_w": stats.mean_signal_window_counts,
        "p_exact": exact.probability,
        "p_approx": approx.probability,
        "rel_gap": _rel_gap(exact.probability, approx.probability),
        "terms": exact.terms,
        "tail_bound": exact.tail_bound,
        "regime_warning": approx.outside_regime,
    }
    notes = []
    if approx.outside_regime:
        notes.append(f"n_w = {stats.mean_signal_window_counts:.4g} is not << 1; approximation outside its regime")
    return Report("prob", [row], list(row), percent={"p_exact", "p_approx"}, notes=notes)


def _scenario(p: dict, detector: str, scan: str, seed: int, trials: int) -> ScenarioConfig:
    n = p["sample_size"]
    tau_w = p["window_width_ns"]
    rate = p["dcp_rate_hz"]
    if p.get("mean_dark") is not None:
        rate = p["mean_dark"] / (n * tau_w * 1e-9)
    ns = p["mean_signal"]
    if p.get("signal_total") is not None:
        ns = p["signal_total"] / n
    timing = lt.TimingPlan.build(p["pulse_width_ns"], tau_w, p["windows_per_frame"], n, p["enforce_criterion"])
    kind = p["placement"].strip().lower()
    # mid-frame by default: in a naive scan window 0 can never be blinded
    window = p["signal_window"] if p["signal_window"] is not None else p["windows_per_frame"] // 2
    if kind == "contained":
        placement = Contained(window)
    elif kind == "straddling":
        placement = Straddling(window, p["fraction"])
    elif kind == UNIFORM:
        placement = UNIFORM
    else:
        raise ConfigurationError(f"unknown placement {kind!r}; expected contained, straddling or uniform")
    return ScenarioConfig(
        timing=timing,
        detector=DetectorParams(rate, p["dead_time_ns"], detector),
        mean_signal_per_pulse=ns,
        trials=trials,
        master_seed=seed,
        placement=placement,
        scan=scan,
    )


def _sim_row(report) -> dict:
    lo, hi = report.confidence_interval_95
    return {
        "detector": report.detector,
        "scan": report.scan,
        "trials": report.trials,
        "successes": report.successes,
        "p_d": report.estimated_p_d,
        "ci_low": lo,
        "ci_high": hi,
        "std_error": report.standard_error,
        "analytic_p_d": report.analytic_p_d,
        "model_time_ms": report.simulated_elapsed_model_time_ms,
        "ci_note": "degenerate (trials < 100)" if report.ci_degenerate else report.ci_method,
    }


def cmd_simulate(p: dict) -> Report:
    rows = []
    detectors = [d.strip() for d in p["detector"].split(",") if d.strip()]
    scans = [s.strip() for s in p["scan"].split(",") if s.strip()]
    for det in detectors:
        for scan in scans:
            cfg = _scenario(p, det, scan, p["seed"], p["trials"])
            rows.append(_sim_row(estimate_detection_probability(cfg, workers=p["workers"])))
    notes = ["trials < 100: confidence interval is not meaningful"] if p["trials"] < 100 else []
    return Report(
        "simulate", rows, list(rows[0]),
        percent={"p_d", "ci_low", "ci_high", "analytic_p_d"}, notes=notes,
    )


def cmd_schedule(p: dict) -> Report:
    sched = build_cycle_schedule(
        p["windows_per_frame"], p["window_width_ns"], p["dead_time_ns"], p["module_width_ns"]
    )
    row = {
        "module_width_ns": sched.module_width_ns,
        "cycles": sched.cycles,
        "stride_windows": sched.stride_windows,
        "windows_per_cycle": sched.windows_per_cycle,
        "gate_spacing_ns": sched.gate_spacing_ns,
    }
    for c in range(1, min(3, sched.cycles) + 1):
        row[f"cycle_{c}_first"] = " ".join(str(w) for w in sched.cycle_windows(c)[:5].tolist())
    if p["dump"]:
        with open(p["dump"], "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["cycle", "position", "window"])
            for c in range(1, sched.cycles + 1):
                for pos, w in enumerate(sched.cycle_windows(c).tolist()):
                    writer.writerow([c, pos, w])
    return Report("schedule", [row], list(row))


def cmd_sweep(p: dict) -> Report:
    axis = SWEEP_AXES.get(p["axis"])
    if axis is None:
        raise ConfigurationError(f"unknown axis {p['axis']!r}; expected one of {', '.join(SWEEP_AXES)}")
    if p["steps"] < 2:
        raise ConfigurationError("steps must be >= 2")
    rows = []
    for value in np.linspace(p["start"], p["stop"], p["steps"]).tolist():
        q = dict(p)
        if axis in INT_AXES:
            value = int(round(value))
        if axis == "loss_db":
            q["mean_signal"] = lt.mean_signal_level(p["source_mean"], value)
        else:
            q[axis] = value
        stats = _stats_from(q)
        exact = ds.detection_prob_exact(stats, ds.SeriesControl(p["tail_epsilon"])).probability
        approx = ds.detection_prob_approx(stats).probability
        row = {
            "parameter": axis, "value": value, "p_exact": exact, "p_approx": approx,
            "rel_gap": _rel_gap(exact, approx), "p_mc": None, "mc_ci_low": None, "mc_ci_high": None,
        }
        if p["mc_trials"] > 0:
            q.update(pulse_width_ns=q["window_width_ns"] / 2, enforce_criterion=True,
                     placement="contained", signal_window=None, fraction=0.5, dead_time_ns=0.0)
            mc = estimate_detection_probability(
                _scenario(q, "ideal", "ideal", p["seed"], p["mc_trials"]), workers=p["workers"]
            )
            row.update(p_mc=mc.estimated_p_d, mc_ci_low=mc.confidence_interval_95[0],
                       mc_ci_high=mc.confidence_interval_95[1])
        rows.append(row)
    return Report("sweep", rows, SWEEP_HEADER, percent={"p_exact", "p_approx", "p_mc", "mc_ci_low", "mc_ci_high"})


COMMANDS = {
    "plan": cmd_plan,
    "prob": cmd_prob,
    "simulate": cmd_simulate,
    "schedule": cmd_schedule,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkd-sync", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, spec in PARAMS.items():
        sp = sub.add_parser(name, help=COMMANDS[name].__name__.replace("cmd_", ""))
        sp.add_argument("--config", help="flat key = value file")
        sp.add_argument("--format", choices=["table", "csv", "json"], default="table")
        sp.add_argument("--output", "-o", help="write to file instead of stdout")
        if name in SEEDED:
            sp.add_argument("--seed", default=None, help=f"master seed (env {SEED_ENV}, default 0)")
        for key, (_, default, help_) in spec.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                            help=f"{help_} [default: {default}]")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = vars(args)
    try:
        file_values = read_config_file(args.config) if args.config else {}
        params = resolve_params(args.command, flags, file_values)
        report = COMMANDS[args.command](params)
    except PrecisionError as exc:
        print(f"error: {exc} (partial sum {exc.partial_sum!r}, tail {exc.tail_bound:.3g})", file=sys.stderr)
        return EXIT_PRECISION
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = render(report, args.format)
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
