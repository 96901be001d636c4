"""Reproduce the reference link plan and the three headline detection probabilities."""
import argparse

from qkdsync.cli import main

SETS = [  # (sample size, dark count rate Hz, mean signal per pulse)
    (256, 5, 0.001),
    (1024, 5, 0.001),
    (1024, 25, 0.01),
]


def run(fmt):
    main(["plan", "--length-km", "100", "--refractive-index", "1.4670", "--pulse-width-ns", "1",
          "--window-width-ns", "2", "--sample-size", "256", "--cycles", "32",
          "--source-mean", "0.1", "--loss-db", "20", "--format", fmt])
    for n, rate, ns in SETS:
        main(["prob", "--sample-size", str(n), "--dcp-rate-hz", str(rate), "--mean-signal", str(ns),
              "--format", fmt])


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--format", default="table", choices=["table", "csv", "json"])
    run(ap.parse_args().format)
