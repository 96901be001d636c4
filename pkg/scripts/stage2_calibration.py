"""Fraction of stage-2 refinements landing within one subinterval of the pulse centre."""
import argparse

from qkdsync.link_timing import TimingPlan
from qkdsync.simulator import UNIFORM, ScenarioConfig, Stage2Config, stage2_calibration
from qkdsync.spad_model import DetectorParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=10_000)
    ap.add_argument("--mean-signal", type=float, default=0.001, help="photoelectrons per pulse")
    ap.add_argument("--dcp-rate-hz", type=float, default=5.0)
    ap.add_argument("--samples", type=int, default=800, help="frames gated per subinterval")
    ap.add_argument("--tolerance", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    timing = TimingPlan.build(1.0, 2.0, 524_288, 256)
    cfg = ScenarioConfig(
        timing=timing,
        detector=DetectorParams(args.dcp_rate_hz),
        mean_signal_per_pulse=args.mean_signal,
        placement=UNIFORM,
        master_seed=args.seed,
        stage2=Stage2Config(samples_per_subinterval=args.samples),
    )
    frac = stage2_calibration(cfg, args.trials, args.tolerance)
    print(f"trials={args.trials} n_s={args.mean_signal} samples={args.samples} "
          f"within +/-{args.tolerance}: {frac:.4f}")


if __name__ == "__main__":
    main()
