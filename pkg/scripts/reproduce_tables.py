#!/usr/bin/env python3
"""Run the four coverage presets and print the coverage / interval tables.

    python3 scripts/reproduce_tables.py [--out runs] [--threads N] [--only laplace|nonlinear]
"""
import argparse
from pathlib import Path

from deepfid import io
from deepfid.cli import main

GROUPS = {"laplace": ["laplace-noafc", "laplace-afc"],
          "nonlinear": ["nonlinear-noafc", "nonlinear-afc"]}

ap = argparse.ArgumentParser()
ap.add_argument("--out", default="runs")
ap.add_argument("--threads", type=int, default=1)
ap.add_argument("--only", choices=sorted(GROUPS))
args = ap.parse_args()

names = GROUPS[args.only] if args.only else GROUPS["laplace"] + GROUPS["nonlinear"]
for name in names:
    out = Path(args.out) / name
    if not (out / "coverage.csv").exists():
        rc = main(["coverage", "--preset", name, "--out", str(out), "--threads", str(args.threads)])
        if rc:
            raise SystemExit(f"{name} failed with exit code {rc}")
    header, rows = io.read_csv(out / "coverage.csv")
    print(f"\n{name}")
    print(f"{'param':>6} {'truth':>6} {'coverage':>9} {'E[len]':>8} {'E[mean]':>8} {'E[median]':>9}")
    for r in rows:
        d = dict(zip(header, r))
        print(f"{d['parameter']:>6} {float(d['truth']):>6g} {float(d['coverage']):>9.3f} "
              f"{float(d['expected_ci_length']):>8.4f} {float(d['expected_mean']):>8.4f} "
              f"{float(d['expected_median']):>9.4f}")
