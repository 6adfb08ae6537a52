#!/usr/bin/env python3
"""BOD method comparison: FAE+AFC, grid-seeded Metropolis and parametric bootstrap.

    python3 scripts/bod_compare.py [--out runs/bod-compare]
"""
import argparse
from pathlib import Path

from deepfid import io
from deepfid.cli import main

ap = argparse.ArgumentParser()
ap.add_argument("--out", default="runs/bod-compare")
args = ap.parse_args()

rc = main(["bod-compare", "--preset", "bod-compare", "--out", args.out])
if rc:
    raise SystemExit(rc)
header, rows = io.read_csv(Path(args.out) / "widths.csv")
print(f"{'method':>22} {'param':>5} {'median':>9} {'lower':>9} {'upper':>9} {'width':>9} covers")
for r in rows:
    d = dict(zip(header, r))
    print(f"{d['method']:>22} {d['parameter']:>5} " + " ".join(
        f"{float(d[k]):>9.4f}" for k in ("median", "lower", "upper", "width")) + f" {d['contains_truth']}")
