"""CSV artifacts: comma-separated, one header row, 17 significant digits, LF endings.

Lines starting with ``#`` are comments and are skipped by the readers.
"""

from __future__ import annotations

import csv
import hashlib
import math
from pathlib import Path

import numpy as np

from .afc import FiducialSampleSet


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def write_csv(path, header, rows, comments=()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    """Return (header, rows) with rows as lists of strings."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [r for r in reader if r]


def read_csv_array(path):
    header, rows = read_csv(path)
    arr = np.array([[float(v) for v in r] for r in rows], dtype=float).reshape(len(rows), len(header))
    return header, arr


def write_vectors(path, vectors, prefix="v"):
    """One row per vector (replicate)."""
    a = np.atleast_2d(np.asarray(vectors, dtype=float))
    return write_csv(path, [f"{prefix}{i}" for i in range(a.shape[1])], a.tolist())


def read_vectors(path):
    return read_csv_array(path)[1]


def write_samples(path, ss: FiducialSampleSet, names, comments=()):
    header = [*names, "distance", "accepted", "stream_id", "proposal_index"]
    rows = (
        [*mu, d, bool(a), ss.stream_id, int(i)]
        for mu, d, a, i in zip(ss.samples, ss.distances, ss.accepted, ss.proposal_index)
    )
    return write_csv(path, header, rows, comments)


def read_samples(path, proposals_used=None) -> FiducialSampleSet:
    header, arr = read_csv_array(path)
    p = header.index("distance")
    stream = int(arr[0, p + 2]) if len(arr) else 0
    return FiducialSampleSet(
        samples=arr[:, :p],
        distances=arr[:, p],
        accepted=arr[:, p + 1].astype(bool),
        proposal_index=arr[:, p + 3].astype(int),
        proposals_used=int(proposals_used if proposals_used is not None else len(arr)),
        stream_id=stream,
    )


def write_curve(path, curve, comments=()):
    return write_csv(path, ["grid", "cc"], zip(curve.grid, curve.cc_values), comments)


def write_matrix(path, row_axis, col_axis, matrix, corner="row\\col"):
    """Contour-ready matrix: first row holds column coordinates, first column row coordinates."""
    header = [corner, *[fmt(c) for c in col_axis]]
    rows = ([r, *vals] for r, vals in zip(row_axis, np.asarray(matrix)))
    return write_csv(path, header, rows)


def read_matrix(path):
    header, rows = read_csv(path)
    cols = np.array([float(c) for c in header[1:]])
    arr = np.array([[float(v) for v in r] for r in rows])
    return arr[:, 0], cols, arr[:, 1:]


COVERAGE_HEADER = ["truth", "parameter", "coverage", "expected_ci_length",
                   "expected_mean", "expected_median", "n_replicates", "n_failed"]


def write_coverage(path, report):
    rows = ([r.truth, r.coord, r.coverage, r.expected_length, r.expected_mean,
             r.expected_median, r.n_replicates, r.n_failed] for r in report.rows)
    return write_csv(path, COVERAGE_HEADER, rows,
                     comments=[f"nominal level {report.alpha}; closed intervals"])


def write_replicates(path, report, names):
    header = ["truth_index", "replicate", "failed", "acceptance_rate", "epsilon"]
    for n in names:
        header += [f"{n}_lower", f"{n}_upper", f"{n}_mean", f"{n}_median", f"{n}_covered"]
    rows = []
    for r in report.replicates:
        row = [r.truth_index, r.replicate, bool(r.failed), r.acceptance_rate, r.epsilon]
        for j in range(len(names)):
            row += [r.lower[j], r.upper[j], r.mean[j], r.median[j], bool(r.covered[j])]
        rows.append(row)
    return write_csv(path, header, rows)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
