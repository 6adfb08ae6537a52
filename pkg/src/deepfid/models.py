"""Data-generating models x = f(z, mu) and their exact inverses.

Arrays follow a batch convention throughout: parameters have shape
``(..., p)``, noise and data have shape ``(..., m)`` and the parameter
gradient has shape ``(..., m, p)``.  Leading axes broadcast.
"""

from __future__ import annotations

import numpy as np

from .rng import RandomSource


class ModelError(ValueError):
    """Invalid input to a data-generating model."""


class DomainError(ModelError):
    """Parameter outside the model's domain."""


class DegenerateInputError(ModelError):
    """Inverse undefined for the given input (e.g. constant noise vector)."""


class ConvergenceError(RuntimeError):
    """Least-squares fit did not converge; ``best`` holds the last iterate."""

    def __init__(self, msg, best):
        super().__init__(msg)
        self.best = best


def _as_float(a):
    a = np.asarray(a)
    return a if a.dtype.kind == "f" else a.astype(float)


class DataGeneratingModel:
    """Base class: subclasses supply ``_forward``, ``_gradient`` and the noise law.

    ``lower``/``upper`` are per-coordinate domain bounds (possibly infinite).
    ``exchangeable`` marks models whose noise coordinates are i.i.d. with an
    identity design, so data and noise may both be sorted before inversion.
    """

    name = "base"
    param_names: tuple = ()
    exchangeable = False

    def __init__(self, data_dim: int, lower, upper, constants: dict | None = None):
        self.data_dim = int(data_dim)
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.constants = dict(constants or {})
        if self.data_dim < 1:
            raise ModelError("data_dim must be positive")

    @property
    def param_dim(self) -> int:
        return len(self.lower)

    def __repr__(self):
        consts = ", ".join(f"{k}={v!r}" for k, v in self.constants.items())
        return f"{type(self).__name__}(m={self.data_dim}, {consts})"

    # -- validation ---------------------------------------------------------
    def _check_mu(self, mu, interior=False):
        mu = _as_float(mu)
        if mu.shape[-1:] != (self.param_dim,):
            raise ModelError(f"parameter has shape {mu.shape}, expected (..., {self.param_dim})")
        if not np.all(np.isfinite(mu)):
            raise DomainError("non-finite parameter")
        if interior:
            bad = np.any((mu <= self.lower) | (mu >= self.upper))
        else:
            bad = np.any((mu < self.lower) | (mu > self.upper))
        if bad:
            where = "interior of " if interior else ""
            raise DomainError(f"parameter outside the {where}domain of {self.name}")
        return mu

    def _check_vec(self, v, what):
        v = _as_float(v)
        if v.shape[-1:] != (self.data_dim,):
            raise ModelError(f"{what} has shape {v.shape}, expected (..., {self.data_dim})")
        return v

    def in_domain(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        return np.all((mu >= self.lower) & (mu <= self.upper) & np.isfinite(mu), axis=-1)

    # -- public operations --------------------------------------------------
    def forward(self, mu, z) -> np.ndarray:
        """x = f(z, mu)."""
        mu = self._check_mu(mu)
        z = self._check_vec(z, "noise")
        return self._forward(mu, z)

    def param_gradient(self, mu, z) -> np.ndarray:
        """d f(z, mu) / d mu, shape (..., m, p); needs mu in the open domain."""
        mu = self._check_mu(mu, interior=True)
        z = self._check_vec(z, "noise")
        return self._gradient(mu, z)

    def sample_noise(self, rng: RandomSource, n: int | None = None) -> np.ndarray:
        """Draws from F0: shape (m,) or (n, m)."""
        shape = (self.data_dim,) if n is None else (n, self.data_dim)
        return self._sample_noise(rng, shape)

    def implied_noise(self, x, mu) -> np.ndarray:
        """The z solving x = f(z, mu) (exists uniquely for all shipped models)."""
        mu = self._check_mu(mu, interior=True)
        x = self._check_vec(x, "data")
        return self._implied_noise(x, mu)

    def log_likelihood(self, x, mu) -> np.ndarray:
        mu = self._check_mu(mu, interior=True)
        x = self._check_vec(x, "data")
        z = self._implied_noise(x, mu)
        return self._noise_logpdf(z) + self._log_abs_dzdx(x, mu)

    def simulate(self, mu, rng: RandomSource, n: int | None = None):
        """Return (x, z) with z ~ F0 and x = f(z, mu)."""
        z = self.sample_noise(rng, n)
        return self.forward(mu, z), z

    # optional analytic inverse; None if unavailable
    inverse = None

    def pilot_start(self) -> np.ndarray:
        """Initial point for least squares: the domain midpoint."""
        return 0.5 * (self.lower + self.upper)

    # -- to be provided by subclasses ---------------------------------------
    def _forward(self, mu, z):
        raise NotImplementedError

    def _gradient(self, mu, z):
        raise NotImplementedError

    def _sample_noise(self, rng, shape):
        raise NotImplementedError

    def _implied_noise(self, x, mu):
        raise NotImplementedError

    def _noise_logpdf(self, z):
        raise NotImplementedError

    def _log_abs_dzdx(self, x, mu):
        raise NotImplementedError


class LaplaceModel(DataGeneratingModel):
    """Location-scale Laplace: x = theta * 1 + sigma * z, z_i ~ Laplace(0, 1)."""

    name = "laplace"
    param_names = ("theta", "sigma")
    exchangeable = True

    def __init__(self, m: int = 100):
        super().__init__(m, [-np.inf, 0.0], [np.inf, np.inf], {"m": m})

    def _forward(self, mu, z):
        return mu[..., :1] + mu[..., 1:2] * z

    def _gradient(self, mu, z):
        ones = np.ones(np.broadcast_shapes(mu.shape[:-1] + (1,), z.shape))
        z = np.broadcast_to(z, ones.shape)
        return np.stack([ones, z], axis=-1)

    def _sample_noise(self, rng, shape):
        return rng.laplace(shape)

    def _implied_noise(self, x, mu):
        return (x - mu[..., :1]) / mu[..., 1:2]

    def _noise_logpdf(self, z):
        return np.sum(-np.abs(z) - np.log(2.0), axis=-1)

    def _log_abs_dzdx(self, x, mu):
        return -self.data_dim * np.log(mu[..., 1])

    def inverse(self, x, z):
        """Argmin over the domain: the OLS solution, or (mean(x), 0) when its scale is negative.

        Sorted x and z never give a negative scale, so under AFC presorting
        this is exactly the closed form.
        """
        mu = laplace_inverse(x, z)
        neg = mu[..., 1] < 0
        if np.any(neg):
            mu[neg, 0] = np.broadcast_to(np.asarray(x, dtype=float).mean(axis=-1), neg.shape)[neg]
            mu[neg, 1] = 0.0
        return mu

    def pilot_start(self):
        return np.array([0.0, 1.0])


class NonlinearModel(DataGeneratingModel):
    """x = mu * 1 + mu**(q/2) * z with standard normal z and mu >= 0."""

    name = "nonlinear-q"
    param_names = ("mu",)

    def __init__(self, m: int = 3, q: float = 3.0, prior_high: float = 6.0):
        super().__init__(m, [0.0], [np.inf], {"m": m, "q": q, "prior_high": prior_high})
        self.q = float(q)
        self.prior_high = float(prior_high)

    def _forward(self, mu, z):
        return mu + mu ** (0.5 * self.q) * z

    def _gradient(self, mu, z):
        h = 0.5 * self.q
        return (1.0 + h * mu ** (h - 1.0) * z)[..., None]

    def _sample_noise(self, rng, shape):
        return rng.normal(shape)

    def _implied_noise(self, x, mu):
        return (x - mu) / mu ** (0.5 * self.q)

    def _noise_logpdf(self, z):
        return np.sum(-0.5 * z * z, axis=-1) - 0.5 * z.shape[-1] * np.log(2 * np.pi)

    def _log_abs_dzdx(self, x, mu):
        return -self.data_dim * 0.5 * self.q * np.log(mu[..., 0])

    def pilot_start(self):
        return np.array([0.5 * self.prior_high])


BOD_DESIGN = (2.0, 4.0, 6.0, 8.0, 10.0)
BOD_OBSERVATION = (0.152, 0.296, 0.413, 0.482, 0.567)
BOD_SIGMA = 0.015


class BODModel(DataGeneratingModel):
    """Biological oxygen demand curve y = t1 (1 - exp(-t2 d)) + z, z ~ N(0, sigma^2).

    The noise vector carries the scale: ``sample_noise`` returns sigma * N(0, 1).
    """

    name = "bod"
    param_names = ("t1", "t2")

    def __init__(self, design=BOD_DESIGN, sigma: float = BOD_SIGMA):
        design = np.asarray(design, dtype=float)
        super().__init__(len(design), [0.0, 0.0], [np.inf, np.inf],
                         {"design": design.tolist(), "sigma": sigma})
        self.design = design
        self.sigma = float(sigma)

    def mean(self, mu):
        mu = _as_float(mu)
        return mu[..., :1] * -np.expm1(-mu[..., 1:2] * self.design)

    def _forward(self, mu, z):
        return self.mean(mu) + z

    def _gradient(self, mu, z):
        e = np.exp(-mu[..., 1:2] * self.design)
        d_t1 = 1.0 - e
        d_t2 = mu[..., :1] * self.design * e
        g = np.stack([d_t1, d_t2], axis=-1)
        return np.broadcast_to(g, np.broadcast_shapes(g.shape, z.shape + (2,)))

    def _sample_noise(self, rng, shape):
        return self.sigma * rng.normal(shape)

    def _implied_noise(self, x, mu):
        return x - self.mean(mu)

    def _noise_logpdf(self, z):
        s2 = self.sigma**2
        return np.sum(-0.5 * z * z / s2, axis=-1) - 0.5 * z.shape[-1] * np.log(2 * np.pi * s2)

    def _log_abs_dzdx(self, x, mu):
        return np.zeros(np.broadcast_shapes(x.shape[:-1], mu.shape[:-1]))

    def pilot_start(self):
        return np.array([1.0, 0.5])


MODELS = {
    LaplaceModel.name: LaplaceModel,
    NonlinearModel.name: NonlinearModel,
    BODModel.name: BODModel,
}


def make_model(name: str, **constants) -> DataGeneratingModel:
    """Look up a model by name and build it from a constants table."""
    try:
        cls = MODELS[name]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**constants)


def register_model(cls):
    """Class decorator adding a user model to the name registry."""
    MODELS[cls.name] = cls
    return cls


def laplace_inverse(x, z) -> np.ndarray:
    """Least-squares solution of x ~ theta + sigma z.

    Returns (theta, sigma) with sigma = sum((x - xbar)(z - zbar)) / sum((z - zbar)^2)
    and theta = xbar - sigma * zbar.  ``z`` may be a batch of shape (n, m).
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape[-1] < 2 or z.shape[-1] != x.shape[-1]:
        raise ModelError("laplace_inverse needs matching vectors of length >= 2")
    xc = x - x.mean(axis=-1, keepdims=True)
    zbar = z.mean(axis=-1, keepdims=True)
    zc = z - zbar
    denom = np.sum(zc * zc, axis=-1)
    # a constant z leaves only rounding residue after centring
    tol = z.shape[-1] * (64 * np.finfo(float).eps * np.max(np.abs(z), axis=-1)) ** 2
    if np.any(denom <= tol):
        raise DegenerateInputError("constant noise vector: scale is not identifiable")
    sigma = np.sum(xc * zc, axis=-1) / denom
    theta = x.mean(axis=-1) - sigma * zbar[..., 0]
    return np.stack([theta, sigma], axis=-1)


def sort_preprocess(x, z):
    """Sort data and noise independently along the last axis."""
    return np.sort(x, axis=-1), np.sort(z, axis=-1)


def _projected_grad(grad, mu, lower, upper):
    g = grad.copy()
    g[(mu <= lower) & (g > 0)] = 0.0
    g[(mu >= upper) & (g < 0)] = 0.0
    return g


def least_squares_fit(model, x, z=None, start=None, gtol=1e-10, max_iter=200):
    """Minimise ||x - f(z, mu)||^2 over the domain by damped Gauss-Newton.

    Levenberg damping starts at 1e-3 and is divided by 10 after an accepted
    step, multiplied by 10 after a rejected one.  Iterates are projected onto
    the domain box.
    """
    x = model._check_vec(x, "data")
    z = np.zeros(model.data_dim) if z is None else model._check_vec(z, "noise")
    mu = np.array(model.pilot_start() if start is None else start, dtype=float)
    mu = np.clip(mu, model.lower, model.upper)
    lam = 1e-3
    r = x - model._forward(mu, z)
    cost = r @ r
    p = model.param_dim
    for _ in range(max_iter):
        J = model._gradient(mu, z)
        grad = _projected_grad(-2.0 * J.T @ r, mu, model.lower, model.upper)
        if np.linalg.norm(grad) <= gtol:
            return mu
        JtJ = J.T @ J
        Jtr = J.T @ r
        while True:
            step = np.linalg.solve(JtJ + lam * np.eye(p), Jtr)
            trial = np.clip(mu + step, model.lower, model.upper)
            r_trial = x - model._forward(trial, z)
            c_trial = r_trial @ r_trial
            if c_trial < cost:
                mu, r, cost = trial, r_trial, c_trial
                lam = max(lam / 10.0, 1e-15)
                break
            lam *= 10.0
            if lam > 1e16:
                # no descent possible in floating point: treat as stationary
                if np.linalg.norm(grad) <= 1e3 * gtol * max(1.0, np.sqrt(cost)):
                    return mu
                raise ConvergenceError("least squares stalled", mu)
    raise ConvergenceError(f"least squares did not converge in {max_iter} iterations", mu)


def nls_pilot_estimate(model: DataGeneratingModel, x, max_iter: int = 200) -> np.ndarray:
    """Least-squares pilot estimate: argmin ||x - f(0, mu)||^2."""
    return least_squares_fit(model, x, None, max_iter=max_iter)


def nonlinear_argmin_inverse(x, z, q: int = 3) -> np.ndarray:
    """Exact argmin over mu >= 0 of ||x - mu - mu^(q/2) z|| for integer q.

    With s = sqrt(mu) the stationarity condition is a polynomial in s of
    degree 2q - 1; candidates are its positive real roots and the boundary
    s = 0.  Vectorised over rows of ``z``; ``x`` is one vector or one row
    per noise row.  Returns shape (n, 1).
    """
    q = int(q)
    if q < 1:
        raise ModelError("q must be a positive integer")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n, m = z.shape
    x = np.broadcast_to(np.asarray(x, dtype=float), (n, m))
    # d/ds sum_i (x_i - s^2 - s^q z_i)^2 = 0, as coefficients indexed by power of s
    coef = np.zeros((n, max(3, 2 * q - 1) + 1))
    coef[:, 1] += 2.0 * x.sum(axis=1)
    coef[:, q - 1] += q * np.sum(z * x, axis=1)
    coef[:, 3] -= 2.0 * m
    coef[:, q + 1] -= (q + 2) * z.sum(axis=1)
    coef[:, 2 * q - 1] -= q * np.sum(z * z, axis=1)
    deg = coef.shape[1] - 1
    lead = coef[:, deg]
    comp = np.zeros((n, deg, deg))
    comp[:, 0, :] = -coef[:, deg - 1::-1] / lead[:, None]
    comp[:, np.arange(1, deg), np.arange(deg - 1)] = 1.0
    roots = np.linalg.eigvals(comp)
    real = (np.abs(roots.imag) <= 1e-9 * np.maximum(1.0, np.abs(roots.real))) & (roots.real > 0)
    s = np.concatenate([np.zeros((n, 1)), np.where(real, roots.real, 0.0)], axis=1)
    mu = s * s
    r = x[:, None, :] - mu[..., None] - mu[..., None] ** (0.5 * q) * z[:, None, :]
    phi = np.sum(r * r, axis=-1)
    return mu[np.arange(n), np.argmin(phi, axis=1)][:, None]
