#!/usr/bin/env python3
"""Plot every cc_*.csv confidence curve in a run directory (needs matplotlib, not a package dependency).

    python3 scripts/plot_curves.py runs/bod-compare [--save curves.png]
"""
import argparse
from pathlib import Path

from deepfid import io

ap = argparse.ArgumentParser()
ap.add_argument("run_dir")
ap.add_argument("--save")
args = ap.parse_args()

import matplotlib.pyplot as plt  # noqa: E402

files = sorted(Path(args.run_dir).glob("cc_*.csv"))
if not files:
    raise SystemExit(f"no cc_*.csv files in {args.run_dir}")
fig, ax = plt.subplots(figsize=(6, 4))
for f in files:
    _, arr = io.read_csv_array(f)
    ax.plot(arr[:, 0], arr[:, 1], label=f.stem[3:])
ax.axhline(0.9, color="grey", lw=0.5, ls="--")
ax.set_ylabel("confidence")
ax.legend(fontsize=7)
fig.tight_layout()
if args.save:
    fig.savefig(args.save, dpi=150)
else:
    plt.show()
