"""Approximate fiducial computation: rejection sampling of inverse-map draws.

Each proposal draws Z* from F0, maps mu* = g(x, Z*), re-simulates
x* = f(Z*, mu*) and keeps mu* when ||x - x*|| < epsilon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import DataGeneratingModel
from .rng import RandomSource


class AfcEmptyError(RuntimeError):
    """Proposal budget exhausted without a single acceptance."""

    def __init__(self, msg, distances):
        d = np.asarray(distances)
        if d.size:
            fin = d[np.isfinite(d)]
            if fin.size:
                msg += (f" (observed distances: min {fin.min():.6g}, median {np.median(fin):.6g},"
                        f" max {fin.max():.6g}, n={d.size})")
        super().__init__(msg)
        self.distances = d


@dataclass
class AfcConfig:
    epsilon: float = math.inf
    target_n: int = 1000
    max_itr: int | None = None
    distance: str = "l2"
    threshold_quantile: float = 0.05
    pilot_size: int = 10_000
    retain_rejects: bool = False
    chunk_size: int = 4096
    # sort data and each Z* before inversion; None means "if the model is exchangeable"
    presort: bool | None = None

    def __post_init__(self):
        if not 0.0 < self.threshold_quantile <= 1.0:
            raise ValueError("threshold_quantile must lie in (0, 1]")
        if self.target_n < 1:
            raise ValueError("target_n must be >= 1")
        if self.max_itr is None:
            self.max_itr = int(min(100 * self.target_n / self.threshold_quantile, 1e8))
        if self.max_itr < self.target_n:
            raise ValueError("max_itr must be >= target_n")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")
        if self.distance not in ("l2", "frobenius"):
            raise ValueError(f"unknown distance {self.distance!r}")


def distance(x, xstar, selector: str = "l2") -> np.ndarray:
    """l2 distance along the last axis (Frobenius coincides for vectors)."""
    x = np.asarray(x, dtype=float)
    xstar = np.asarray(xstar, dtype=float)
    if x.shape[-1] != xstar.shape[-1]:
        raise ValueError("distance between vectors of different length")
    if selector not in ("l2", "frobenius"):
        raise ValueError(f"unknown distance {selector!r}")
    d = x - xstar
    return np.sqrt(np.sum(d * d, axis=-1))


@dataclass
class FiducialSampleSet:
    """Retained draws; ``accepted`` is all True unless rejects were kept."""

    samples: np.ndarray
    distances: np.ndarray
    accepted: np.ndarray
    proposal_index: np.ndarray
    proposals_used: int
    epsilon: float = math.inf
    stream_id: int = 0
    noise: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def n_accepted(self) -> int:
        return int(np.count_nonzero(self.accepted))

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.proposals_used if self.proposals_used else 0.0

    @property
    def accepted_samples(self) -> np.ndarray:
        return self.samples[self.accepted]

    def restrict(self, epsilon: float) -> "FiducialSampleSet":
        """Rows whose distance is below a smaller threshold (same proposals)."""
        keep = self.distances < epsilon
        return FiducialSampleSet(
            self.samples[keep], self.distances[keep], np.ones(keep.sum(), bool),
            self.proposal_index[keep], self.proposals_used, epsilon, self.stream_id,
            None if self.noise is None else self.noise[keep],
        )


def _propose(model, inverse, x_obs, k, presort, selector, rng):
    z = model.sample_noise(rng, k)
    if presort:
        z = np.sort(z, axis=-1)
    mu = np.asarray(inverse(x_obs, z), dtype=float).reshape(k, model.param_dim)
    ok = model.in_domain(mu)
    d = np.full(k, np.inf)
    if ok.any():
        xs = model.forward(mu[ok], z[ok])
        d[ok] = distance(x_obs, xs, selector)
    return z, mu, d


def afc_run(model: DataGeneratingModel, inverse, x, cfg: AfcConfig, rng: RandomSource) -> FiducialSampleSet:
    """Propose until ``target_n`` acceptances or ``max_itr`` proposals.

    ``inverse(x, Z)`` takes a data vector and a batch of noise rows.  Inverse
    outputs outside the parameter domain get infinite distance.
    """
    presort = model.exchangeable if cfg.presort is None else cfg.presort
    x_obs = model._check_vec(x, "data")
    if presort:
        x_obs = np.sort(x_obs)
    eps = cfg.epsilon
    kept_mu, kept_d, kept_acc, kept_idx, kept_z = [], [], [], [], []
    n_acc = 0
    used = 0
    all_d = []
    while used < cfg.max_itr and n_acc < cfg.target_n:
        k = min(cfg.chunk_size, cfg.max_itr - used)
        z, mu, d = _propose(model, inverse, x_obs, k, presort, cfg.distance, rng)
        acc = d < eps
        csum = np.cumsum(acc)
        if n_acc + csum[-1] >= cfg.target_n:
            stop = int(np.searchsorted(csum, cfg.target_n - n_acc)) + 1
            z, mu, d, acc = z[:stop], mu[:stop], d[:stop], acc[:stop]
            k = stop
        idx = np.arange(used, used + k)
        keep = slice(None) if cfg.retain_rejects else acc
        kept_mu.append(mu[keep])
        kept_d.append(d[keep])
        kept_acc.append(acc[keep])
        kept_idx.append(idx[keep])
        kept_z.append(z[keep])
        if not acc.any():
            all_d.append(d)
        n_acc += int(acc.sum())
        used += k
    if n_acc == 0:
        raise AfcEmptyError(f"no proposal accepted in {used} tries at epsilon={eps:.6g}",
                            np.concatenate(all_d) if all_d else [])
    return FiducialSampleSet(
        samples=np.concatenate(kept_mu),
        distances=np.concatenate(kept_d),
        accepted=np.concatenate(kept_acc),
        proposal_index=np.concatenate(kept_idx),
        proposals_used=used,
        epsilon=eps,
        stream_id=rng.stream_id,
        noise=np.concatenate(kept_z),
    )


def unconditional_samples(model, inverse, x, n, rng, presort=None) -> FiducialSampleSet:
    """n proposals without truncation (epsilon = infinity)."""
    cfg = AfcConfig(epsilon=math.inf, target_n=n, max_itr=n, presort=presort)
    return afc_run(model, inverse, x, cfg, rng)


def pilot_distances(model, inverse, x, cfg: AfcConfig, rng: RandomSource) -> np.ndarray:
    if cfg.pilot_size < 100:
        raise ValueError("pilot_size must be at least 100")
    pilot = unconditional_samples(model, inverse, x, cfg.pilot_size, rng, cfg.presort)
    return pilot.distances


def rounding_floor(x) -> float:
    """Distances below this are float noise on an exact reconstruction of x."""
    return 1024 * np.finfo(float).eps * max(1.0, float(np.linalg.norm(x)))


def select_threshold(model, inverse, x, cfg: AfcConfig, rng: RandomSource) -> float:
    """Empirical ``threshold_quantile`` quantile of pilot-batch distances.

    Never below ``rounding_floor(x)``: when the inverse reconstructs x exactly
    (Laplace with m = 2) the pilot distances are pure rounding noise and the
    quantile would reject exact solutions.
    """
    from .inference import sample_quantile

    d = pilot_distances(model, inverse, x, cfg, rng)
    d = d[np.isfinite(d)]
    if d.size == 0:
        raise AfcEmptyError("every pilot proposal left the parameter domain", [])
    return max(float(sample_quantile(np.sort(d), cfg.threshold_quantile)), rounding_floor(x))


def afc_auto(model, inverse, x, cfg: AfcConfig, rng: RandomSource) -> FiducialSampleSet:
    """Pick epsilon from a pilot batch on ``rng``, then run the sampler on the same stream."""
    eps = select_threshold(model, inverse, x, cfg, rng)
    run_cfg = AfcConfig(**{**cfg.__dict__, "epsilon": eps})
    return afc_run(model, inverse, x, run_cfg, rng)
