"""Exit criteria. Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line."""
import itertools
import json
import math
import time

import numpy as np
import pytest

from oracles import enumerate_by_max, enumerate_joint
from qkdsync.cli import main
from qkdsync.detection_stats import (
    CountStatistics,
    detection_prob_approx,
    detection_prob_exact,
)
from qkdsync.link_timing import TimingPlan, total_sync_time
from qkdsync.simulator import (
    Contained,
    ScenarioConfig,
    estimate_detection_probability,
    run_stage2_refine,
    subinterval_means,
    trial_rng,
)
from qkdsync.spad_model import DetectorParams, build_cycle_schedule

REF_NW = 524_288


@pytest.fixture
def verdict(capsys):
    def _verdict(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return _verdict


def within_3se(p_hat, p, trials):
    return abs(p_hat - p) <= 3 * math.sqrt(p * (1 - p) / trials)


def test_1_closed_form_reproduces_worked_values(verdict):
    cases = [  # (N, dcp Hz, n_s, expected %, tolerance pp)
        (256, 5, 0.001, 7.95, 0.05),
        (1024, 5, 0.001, 27.5, 0.2),
        (1024, 25, 0.01, 99.89, 0.05),
    ]
    t0 = time.perf_counter()
    got = [
        detection_prob_approx(CountStatistics.from_physical(REF_NW, n, r, 2.0, ns)).probability * 100
        for n, r, ns, *_ in cases
    ]
    elapsed = time.perf_counter() - t0
    ok = all(abs(g - c[3]) <= c[4] for g, c in zip(got, cases)) and elapsed < 0.1
    verdict(1, ok, f"P_D = {', '.join(f'{g:.3f}%' for g in got)} in {elapsed * 1e3:.2f} ms")


def test_2_exact_vs_closed_form_agreement(verdict):
    stats = CountStatistics.from_physical(REF_NW, 256, 5, 2.0, 0.001)
    t0 = time.perf_counter()
    exact = detection_prob_exact(stats)
    approx = detection_prob_approx(stats).probability
    elapsed = time.perf_counter() - t0
    gap = abs(exact.probability - approx) / exact.probability
    ok = gap <= 2e-4 and exact.tail_bound < 1e-10 and elapsed < 1.0
    verdict(2, ok, f"relative gap {gap:.3e} (tail {exact.tail_bound:.1e}, {exact.terms} terms, {elapsed:.3f} s)")


def test_3_exact_matches_joint_enumeration(verdict):
    means = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0]
    # the running-max enumeration must agree with the full grid where both fit in memory
    for w, nd, nw in itertools.product([2, 3, 4], [0.5, 2.0], [0.25, 2.0]):
        assert enumerate_joint(w, nd, nw) == pytest.approx(enumerate_by_max(w, nd, nw), abs=1e-14)
    worst = 0.0
    points = 0
    for w in range(2, 7):
        oracle = enumerate_joint if w <= 4 else enumerate_by_max
        for nd, nw in itertools.product(means, means):
            got = detection_prob_exact(CountStatistics(w, nd, nw)).probability
            worst = max(worst, abs(got - oracle(w, nd, nw)))
            points += 1
    verdict(3, worst <= 1e-8, f"max |exact - enumeration| = {worst:.2e} over {points} grid points")


MC_SCENARIOS = [  # (N_w, N, n_d, N * n_s)
    (16, 256, 0.05, 0.5),
    (16, 64, 0.2, 1.0),
    (256, 256, 1e-3, 0.4),
    (256, 128, 0.01, 1.0),
    (4096, 256, 2.56e-6, 0.256),
]


def test_4_monte_carlo_matches_exact(verdict):
    trials = 100_000
    lines = []
    ok = True
    for i, (n_w, n, nd, s) in enumerate(MC_SCENARIOS):
        cfg = ScenarioConfig.from_means(n_w, n, nd, s, trials=trials, master_seed=1000 + i)
        rep = estimate_detection_probability(cfg)
        exact = detection_prob_exact(CountStatistics(n_w, nd, nd + s)).probability
        good = within_3se(rep.estimated_p_d, exact, trials)
        ok &= good
        z = (rep.estimated_p_d - exact) / math.sqrt(exact * (1 - exact) / trials)
        lines.append(f"N_w={n_w}: {z:+.2f} SE")
    verdict(4, ok, "; ".join(lines))


def test_5_timing_plan(verdict, capsys):
    code = main(["plan", "--length-km", "100", "--refractive-index", "1.4670", "--pulse-width-ns", "1",
                 "--window-width-ns", "2", "--sample-size", "256", "--cycles", "1",
                 "--source-mean", "0.1", "--loss-db", "20", "--format", "json"])
    row = json.loads(capsys.readouterr().out)["rows"][0]
    ok = (
        code == 0
        and row["n_w"] == 524_288
        and row["t_s_ns"] == 1_048_576
        and 953 <= row["f_s_hz"] <= 955
        and row["frame_growth_pct"] <= 5
        and math.isclose(row["mean_signal"], 0.001, rel_tol=1e-12)
        and abs(row["total_sync_time_ms"] - 268.8) <= 0.005 * 268.8
    )
    verdict(5, ok, f"N_w={row['n_w']} T_s={row['t_s_ns']:.0f} ns f_s={row['f_s_hz']:.2f} Hz "
                   f"growth={row['frame_growth_pct']:.2f}% n_s={row['mean_signal']:.4g} "
                   f"T={row['total_sync_time_ms']:.2f} ms")


def test_6_dead_time_schedule(verdict):
    t0 = time.perf_counter()
    s = build_cycle_schedule(REF_NW, 2.0, 45.0)
    order = s.visit_order()
    permutation = np.array_equal(np.sort(order), np.arange(REF_NW))
    spacing = min(np.diff(s.cycle_windows(c)).min() for c in range(1, s.cycles + 1)) * 2.0
    elapsed = time.perf_counter() - t0
    scale = total_sync_time(256, 1.048576, s.cycles) / total_sync_time(256, 1.048576, 1)
    ok = (s.module_width_ns == 64 and s.cycles == 32 and permutation and spacing >= 45
          and scale == 32 and elapsed < 1.0)
    verdict(6, ok, f"tau_m={s.module_width_ns:g} ns N_c={s.cycles} permutation={permutation} "
                   f"spacing={spacing:g} ns time x{scale:g} ({elapsed:.3f} s)")


def test_7_geiger_clipping_never_helps(verdict):
    trials = 10_000
    worst = -np.inf
    grid = list(itertools.product([2, 16, 1024], [0.0, 0.05, 0.1], [0.0, 1.0, 2.0]))
    for i, (n_w, nd, s) in enumerate(grid):
        kw = dict(trials=trials, master_seed=2000 + i)
        ideal = estimate_detection_probability(ScenarioConfig.from_means(n_w, 16, nd, s, **kw))
        geiger = estimate_detection_probability(
            ScenarioConfig.from_means(n_w, 16, nd, s, mode="geiger", dead_time_ns=2.0, scan="scheduled", **kw)
        )
        se = max(ideal.standard_error, geiger.standard_error, 1 / trials)
        worst = max(worst, (geiger.estimated_p_d - ideal.estimated_p_d) / se)
    verdict(7, worst <= 3, f"max (Geiger - ideal) = {worst:+.2f} SE over {len(grid)} grid points")


def test_8_simulate_csv_deterministic(verdict, tmp_path, capsys):
    base = ["simulate", "--windows-per-frame", "1024", "--sample-size", "64", "--mean-dark", "0.05",
            "--signal-total", "1", "--detector", "ideal,geiger", "--scan", "scheduled", "--trials", "3000",
            "--seed", "42", "--format", "csv"]
    outputs = []
    for run, workers in enumerate(["1", "1", "2", "3"]):
        path = tmp_path / f"run{run}.csv"
        assert main(base + ["--workers", workers, "--output", str(path)]) == 0
        outputs.append(path.read_bytes())
    ok = all(o == outputs[0] for o in outputs)
    verdict(8, ok, f"{len(outputs)} runs (workers 1,1,2,3) byte-identical={ok}")


def test_9_stage2_properties(verdict):
    timing = TimingPlan.build(0.2, 2.0, 64, 16, criterion_compliant=False)
    width = 2.0 / 17

    def cfg(offset):
        return ScenarioConfig(timing=timing, detector=DetectorParams(0.0), mean_signal_per_pulse=50.0,
                              placement=Contained(10, offset))

    inside = cfg(25 * width + 0.01 - 2.0)
    localised = all(run_stage2_refine(inside, 10, trial_rng(9, i, 1)) in {25, 26} for i in range(200))
    boundary = cfg(26 * width - 0.1 - 2.0)
    means = subinterval_means(boundary, 10, boundary.placement)
    picks = {run_stage2_refine(boundary, 10, trial_rng(9, i, 1)) for i in range(200)}
    symmetric = math.isclose(means[25], means[26]) and picks <= {25, 26}
    verdict(9, localised and symmetric,
            f"noiseless localisation={localised}, boundary picks={sorted(picks)} symmetric={symmetric}")


@pytest.mark.longrun
def test_full_scale_monte_carlo(verdict):
    trials = 20_000
    cfg = ScenarioConfig.from_means(REF_NW, 256, 2.56e-6, 0.256, trials=trials, master_seed=7)
    rep = estimate_detection_probability(cfg)
    ok = within_3se(rep.estimated_p_d, rep.analytic_p_d, trials)
    verdict("4b", ok, f"N_w=524288: MC {rep.estimated_p_d:.4f} vs exact {rep.analytic_p_d:.4f}")
