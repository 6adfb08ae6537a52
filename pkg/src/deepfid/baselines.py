"""Comparison methods built on the closed-form fiducial density.

The density is r(mu) ∝ L(x | mu) J(x, mu) with J = D(df/dmu) evaluated at
the noise implied by (x, mu) and D(A) = sqrt(det(A^T A)).  It is normalised
on a tensor grid by the trapezoid rule and sampled by random-walk Metropolis.
The parametric bootstrap refits least squares on data simulated at the fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .afc import FiducialSampleSet
from .models import ConvergenceError, DataGeneratingModel, least_squares_fit, nls_pilot_estimate
from .rng import RandomSource


class ZeroDensityError(RuntimeError):
    pass


class MetropolisError(RuntimeError):
    pass


def gram_det_root(A) -> np.ndarray:
    """D(A) = sqrt(det(A^T A)) over the trailing two axes."""
    A = np.asarray(A, dtype=float)
    G = np.swapaxes(A, -1, -2) @ A
    return np.sqrt(np.maximum(np.linalg.det(G), 0.0))


def jacobian_factor(model: DataGeneratingModel, x, mu) -> np.ndarray:
    z = model.implied_noise(x, mu)
    return gram_det_root(model.param_gradient(mu, z))


def log_likelihood(model: DataGeneratingModel, x, mu) -> np.ndarray:
    return model.log_likelihood(x, mu)


def log_fiducial_density(model: DataGeneratingModel, x, mu) -> np.ndarray:
    """Unnormalised log r(mu); -inf off the open domain.  Accepts batches of mu."""
    mu = np.asarray(mu, dtype=float)
    inside = np.all((mu > model.lower) & (mu < model.upper), axis=-1)
    out = np.full(mu.shape[:-1], -np.inf)
    if np.any(inside):
        m = mu[inside]
        with np.errstate(divide="ignore"):
            out[inside] = model.log_likelihood(x, m) + np.log(jacobian_factor(model, x, m))
    return out[()] if out.ndim == 0 else out


@dataclass
class DensityGrid:
    axes: list            # one 1-D array per coordinate
    density: np.ndarray   # normalised values on the tensor grid
    log_norm: float       # log of the integral of the unnormalised density
    cell_measure: float   # product of axis spacings

    @property
    def dim(self):
        return len(self.axes)

    def integral(self) -> float:
        v = self.density
        for ax in reversed(self.axes):
            v = trapezoid(v, ax, axis=-1)
        return float(v)

    def marginal(self, coord: int) -> np.ndarray:
        v = self.density
        for k in reversed(range(self.dim)):
            if k != coord:
                v = trapezoid(v, self.axes[k], axis=k)
        return v

    def marginal_cdf(self, coord: int, t=None):
        """CDF of one marginal, on its axis or interpolated at ``t``."""
        ax = self.axes[coord]
        c = cumulative_trapezoid(self.marginal(coord), ax, initial=0.0)
        c /= c[-1]
        if t is None:
            return c
        return np.interp(t, ax, c, left=0.0, right=1.0)

    def marginal_quantile(self, coord: int, p):
        return np.interp(p, self.marginal_cdf(coord), self.axes[coord])

    def marginal_moments(self, coord: int):
        ax = self.axes[coord]
        f = self.marginal(coord)
        mean = trapezoid(ax * f, ax)
        var = trapezoid((ax - mean) ** 2 * f, ax)
        return float(mean), float(var)


def _mesh(axes):
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack(grids, axis=-1)


def fiducial_density_grid(model, x, bounds, n_points=400) -> DensityGrid:
    """Evaluate and normalise the fiducial density on a tensor grid.

    ``bounds`` is a sequence of (low, high) per coordinate; ``n_points`` an int
    or one int per coordinate.
    """
    p = model.param_dim
    if len(bounds) != p:
        raise ValueError("one (low, high) pair per parameter")
    counts = [n_points] * p if np.isscalar(n_points) else list(n_points)
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(bounds, counts)]
    logd = log_fiducial_density(model, x, _mesh(axes))
    top = np.max(logd)
    if not np.isfinite(top):
        raise ZeroDensityError("density vanishes on the whole grid")
    dens = np.exp(logd - top)
    total = dens
    for ax in reversed(axes):
        total = trapezoid(total, ax, axis=-1)
    dens = dens / total
    cell = float(np.prod([ax[1] - ax[0] for ax in axes]))
    return DensityGrid(axes, dens, float(top + np.log(total)), cell)


def support_bounds(model, x, coarse_bounds, n_points=200, rel_tol=1e-12):
    """Bounding box of grid cells where the density exceeds rel_tol * max, padded by one cell."""
    axes = [np.linspace(lo, hi, n_points) for lo, hi in coarse_bounds]
    logd = log_fiducial_density(model, x, _mesh(axes))
    keep = logd >= np.max(logd) + np.log(rel_tol)
    out = []
    for k, ax in enumerate(axes):
        other = tuple(i for i in range(len(axes)) if i != k)
        hit = np.nonzero(np.any(keep, axis=other) if other else keep)[0]
        lo = ax[max(hit[0] - 1, 0)]
        hi = ax[min(hit[-1] + 1, len(ax) - 1)]
        out.append((float(lo), float(hi)))
    return out


# --- Metropolis ------------------------------------------------------------------

@dataclass
class MetropolisConfig:
    step_scale: tuple
    n_samples: int = 50_000
    burn_in: int = 5_000
    initial: tuple | None = None

    def __post_init__(self):
        if self.burn_in < 0 or self.n_samples < 1:
            raise ValueError("need n_samples >= 1 and burn_in >= 0")


def default_step_scale(grid: DensityGrid):
    """2.4 / sqrt(p) times each marginal standard deviation."""
    p = grid.dim
    return tuple(2.4 / np.sqrt(p) * np.sqrt(grid.marginal_moments(k)[1]) for k in range(p))


def grid_mode(grid: DensityGrid):
    idx = np.unravel_index(np.argmax(grid.density), grid.density.shape)
    return tuple(float(ax[i]) for ax, i in zip(grid.axes, idx))


def metropolis_sample(log_target, cfg: MetropolisConfig, rng: RandomSource) -> FiducialSampleSet:
    """Symmetric Gaussian random-walk Metropolis; returns the post-burn-in draws."""
    x = np.array(cfg.initial, dtype=float)
    step = np.asarray(cfg.step_scale, dtype=float)
    lp = float(log_target(x))
    if not np.isfinite(lp):
        raise MetropolisError("log target is not finite at the initial point")
    total = cfg.burn_in + cfg.n_samples
    p = len(x)
    noise = rng.normal((total, p)) * step
    logu = np.log(rng.open_uniform(total))
    out = np.empty((cfg.n_samples, p))
    accepted = 0
    for i in range(total):
        prop = x + noise[i]
        lq = float(log_target(prop))
        if logu[i] < lq - lp:
            x, lp = prop, lq
            if i >= cfg.burn_in:
                accepted += 1
        if i >= cfg.burn_in:
            out[i - cfg.burn_in] = x
    if accepted == 0:
        raise MetropolisError(f"no moves accepted after burn-in with step scale {tuple(step)}")
    ss = FiducialSampleSet(out, np.zeros(cfg.n_samples), np.ones(cfg.n_samples, bool),
                           np.arange(cfg.burn_in, total), cfg.n_samples, np.inf, rng.stream_id)
    ss.info = {"method": "metropolis", "move_acceptance": accepted / cfg.n_samples}
    return ss


def fiducial_metropolis(model, x, grid: DensityGrid, rng, n_samples=50_000, burn_in=5_000):
    """Metropolis on the fiducial density, started at the grid mode with default steps."""
    cfg = MetropolisConfig(default_step_scale(grid), n_samples, burn_in, grid_mode(grid))
    return metropolis_sample(lambda mu: log_fiducial_density(model, x, mu), cfg, rng)


def ks_distance(samples, cdf) -> float:
    """sup_t |F_n(t) - F(t)| for a continuous reference CDF."""
    s = np.sort(np.asarray(samples, dtype=float))
    n = len(s)
    F = cdf(s)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


# --- parametric bootstrap ------------------------------------------------------

def parametric_bootstrap(model, x, n_boot: int, rng: RandomSource) -> FiducialSampleSet:
    """Least-squares fit, then refits on n_boot datasets simulated at the fit.

    Replicates whose refit does not converge are dropped and counted in
    ``info["dropped"]``.
    """
    fit = nls_pilot_estimate(model, x)
    z = model.sample_noise(rng, n_boot)
    xb = model.forward(fit, z)
    zero = np.zeros(model.data_dim)
    rows, resid, idx = [], [], []
    dropped = 0
    for b in range(n_boot):
        try:
            mu = least_squares_fit(model, xb[b], None, start=fit)
        except ConvergenceError:
            dropped += 1
            continue
        rows.append(mu)
        r = xb[b] - model._forward(mu, zero)
        resid.append(np.sqrt(r @ r))
        idx.append(b)
    n = len(rows)
    ss = FiducialSampleSet(np.array(rows).reshape(n, model.param_dim), np.array(resid),
                           np.ones(n, bool), np.array(idx, dtype=int), n_boot, np.inf, rng.stream_id)
    ss.info = {"method": "bootstrap", "fit": fit, "dropped": dropped}
    return ss
