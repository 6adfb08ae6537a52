"""Inference from fiducial samples: quantiles, intervals, confidence curves, coverage."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .afc import AfcConfig, AfcEmptyError, afc_auto, afc_run, unconditional_samples
from .rng import RandomSource

CC_LEVELS = (0.5, 0.8, 0.9, 0.95, 0.99)


@dataclass
class EmpiricalGFD:
    """Per-coordinate sorted marginals of a fiducial sample."""

    sorted_samples: np.ndarray  # (n_fid, p), each column sorted

    @classmethod
    def from_samples(cls, samples) -> "EmpiricalGFD":
        s = np.asarray(samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if len(s) < 1:
            raise ValueError("empirical GFD needs at least one sample")
        return cls(np.sort(s, axis=0))

    @property
    def n_fid(self) -> int:
        return self.sorted_samples.shape[0]

    @property
    def dim(self) -> int:
        return self.sorted_samples.shape[1]

    def marginal(self, coord: int) -> np.ndarray:
        return self.sorted_samples[:, coord]


def sample_quantile(sorted_values, p):
    """Order-statistic interpolation with h = (n - 1) p + 1 (1-based)."""
    x = np.asarray(sorted_values, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("quantile level must lie in [0, 1]")
    n = len(x)
    if n == 1:
        return np.full(p.shape, x[0])[()]
    h = (n - 1) * p  # zero-based position
    lo = np.floor(h).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    return (x[lo] + (h - lo) * (x[hi] - x[lo]))[()]


def quantile(gfd: EmpiricalGFD, coord: int, p):
    return sample_quantile(gfd.marginal(coord), p)


def confidence_interval(gfd: EmpiricalGFD, coord: int, alpha: float):
    """Equal-tailed level-alpha interval from the (1 -/+ alpha)/2 quantiles."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    lo, hi = quantile(gfd, coord, [(1 - alpha) / 2, (1 + alpha) / 2])
    return float(lo), float(hi)


def point_estimates(gfd: EmpiricalGFD, coord: int):
    """(mean, median) of one marginal."""
    v = gfd.marginal(coord)
    return float(np.mean(v)), float(sample_quantile(v, 0.5))


def empirical_cdf(sorted_values, t):
    """R(t) = #{samples <= t} / n."""
    return np.searchsorted(sorted_values, t, side="right") / len(sorted_values)


@dataclass
class ConfidenceCurve:
    grid: np.ndarray
    cc_values: np.ndarray
    median: float
    intervals: dict = field(default_factory=dict)


def confidence_curve(gfd: EmpiricalGFD, coord: int, n_points: int = 512, margin: float = 0.05,
                     grid=None, levels=CC_LEVELS) -> ConfidenceCurve:
    """2|R(t) - 0.5| on a grid spanning the samples plus a relative margin."""
    v = gfd.marginal(coord)
    if grid is None:
        if n_points < 1:
            raise ValueError("empty confidence-curve grid")
        span = v[-1] - v[0]
        pad = margin * span if span > 0 else margin * max(1.0, abs(v[0]))
        grid = np.linspace(v[0] - pad, v[-1] + pad, n_points)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty confidence-curve grid")
    cc = 2.0 * np.abs(empirical_cdf(v, grid) - 0.5)
    _, med = point_estimates(gfd, coord)
    intervals = {a: confidence_interval(gfd, coord, a) for a in levels}
    return ConfidenceCurve(grid, cc, med, intervals)


# --- coverage studies ---------------------------------------------------------

@dataclass
class ReplicateResult:
    truth_index: int
    replicate: int
    lower: np.ndarray
    upper: np.ndarray
    mean: np.ndarray
    median: np.ndarray
    covered: np.ndarray
    acceptance_rate: float
    epsilon: float
    failed: bool = False
    error: str = ""


@dataclass
class CoverageRow:
    truth: float
    coord: str
    coverage: float
    expected_length: float
    expected_mean: float
    expected_median: float
    n_replicates: int
    n_failed: int = 0


@dataclass
class CoverageReport:
    rows: list
    replicates: list
    alpha: float

    def row(self, coord: str, truth: float | None = None) -> CoverageRow:
        for r in self.rows:
            if r.coord == coord and (truth is None or r.truth == truth):
                return r
        raise KeyError((coord, truth))


def data_stream(truth_index: int, replicate: int) -> int:
    """Stream id for simulating replicate data; the sampler uses the next odd id."""
    return 2 * ((truth_index << 24) + replicate)


def run_replicate(model, inverse, mu_true, truth_index, replicate, n_fid, afc, alpha, seed):
    data_rng = RandomSource(seed, data_stream(truth_index, replicate))
    samp_rng = RandomSource(seed, data_stream(truth_index, replicate) + 1)
    x, _ = model.simulate(mu_true, data_rng)
    p = model.param_dim
    try:
        if afc is None:
            ss = unconditional_samples(model, inverse, x, n_fid, samp_rng)
        else:
            cfg = AfcConfig(**{**afc.__dict__, "target_n": n_fid, "max_itr": None})
            if math.isinf(afc.epsilon):
                ss = afc_auto(model, inverse, x, cfg, samp_rng)
            else:
                ss = afc_run(model, inverse, x, cfg, samp_rng)
    except AfcEmptyError as exc:
        nan = np.full(p, np.nan)
        return ReplicateResult(truth_index, replicate, nan, nan, nan, nan,
                               np.zeros(p, bool), 0.0, float("nan"), True, str(exc))
    gfd = EmpiricalGFD.from_samples(ss.accepted_samples)
    lo = np.empty(p)
    hi = np.empty(p)
    mean = np.empty(p)
    med = np.empty(p)
    for j in range(p):
        lo[j], hi[j] = confidence_interval(gfd, j, alpha)
        mean[j], med[j] = point_estimates(gfd, j)
    covered = (lo <= mu_true) & (mu_true <= hi)
    return ReplicateResult(truth_index, replicate, lo, hi, mean, med, covered,
                           ss.acceptance_rate, ss.epsilon)


def coverage_study(model, inverse, true_params, n_datasets: int, n_fid: int,
                   afc: AfcConfig | None = None, alpha: float = 0.9, seed: int = 0,
                   threads: int = 1) -> CoverageReport:
    """Monte Carlo coverage of level-alpha fiducial intervals.

    Replicate r of truth t simulates its data on stream ``data_stream(t, r)``
    and samples on the following stream, so results do not depend on
    ``threads`` or on whether AFC is used.  With ``afc`` given and an infinite
    ``afc.epsilon``, each replicate picks its threshold from a pilot batch.
    Failed replicates (no acceptances) are recorded and excluded.
    """
    truths = [np.atleast_1d(np.asarray(t, dtype=float)) for t in true_params]
    jobs = [(ti, r) for ti in range(len(truths)) for r in range(n_datasets)]

    def work(job):
        ti, r = job
        return run_replicate(model, inverse, truths[ti], ti, r, n_fid, afc, alpha, seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(work, jobs))
    else:
        reps = [work(j) for j in jobs]

    rows = []
    names = model.param_names
    for ti, truth in enumerate(truths):
        mine = [r for r in reps if r.truth_index == ti]
        ok = [r for r in mine if not r.failed]
        for j in range(model.param_dim):
            if ok:
                cov = np.mean([r.covered[j] for r in ok])
                length = np.mean([r.upper[j] - r.lower[j] for r in ok])
                emean = np.mean([r.mean[j] for r in ok])
                emed = np.mean([r.median[j] for r in ok])
            else:
                cov = length = emean = emed = float("nan")
            rows.append(CoverageRow(float(truth[j]), names[j], float(cov), float(length),
                                    float(emean), float(emed), len(ok), len(mine) - len(ok)))
    return CoverageReport(rows, reps, alpha)
