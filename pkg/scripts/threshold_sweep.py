#!/usr/bin/env python3
"""Threshold sweep on one nonlinear observation; extra epsilons may be given explicitly.

    python3 scripts/threshold_sweep.py [--out runs/sweep] [--truth 3.5] [--seed 20240102] [--epsilon E ...]
"""
import argparse
import tempfile
from pathlib import Path

import yaml

from deepfid import io
from deepfid.cli import main
from deepfid.config import preset

ap = argparse.ArgumentParser()
ap.add_argument("--out", default="runs/sweep")
ap.add_argument("--truth", type=float, default=3.5)
ap.add_argument("--seed", type=int, default=20240102)
ap.add_argument("--epsilon", type=float, action="append")
args = ap.parse_args()

cfg = preset("nonlinear-sweep")
cfg["observation"] = {"truth": [args.truth]}
cfg["seed"] = args.seed
with tempfile.NamedTemporaryFile("w", suffix=".yaml", delete=False) as fh:
    yaml.safe_dump(cfg, fh)
argv = ["sweep", "--config", fh.name, "--out", args.out]
for e in args.epsilon or []:
    argv += ["--epsilon", repr(e)]
rc = main(argv)
Path(fh.name).unlink()
if rc:
    raise SystemExit(rc)

header, arr = io.read_csv_array(Path(args.out) / "sweep.csv")
print(f"{'epsilon':>10} {'accepted':>9} {'median':>8} {'width':>8}")
for row in arr:
    print(f"{row[1]:>10.4g} {int(row[2]):>9d} {row[header.index('mu_median')]:>8.3f} "
          f"{row[header.index('mu_width')]:>8.3f}")
