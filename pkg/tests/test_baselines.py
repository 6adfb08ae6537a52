import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import norm

from deepfid.afc import AfcConfig, afc_auto, unconditional_samples
from deepfid.baselines import (MetropolisConfig, MetropolisError, ZeroDensityError,
                               default_step_scale, fiducial_density_grid, fiducial_metropolis,
                               gram_det_root, jacobian_factor, ks_distance, log_fiducial_density,
                               log_likelihood, metropolis_sample, parametric_bootstrap,
                               support_bounds)
from deepfid.models import BOD_OBSERVATION, BODModel, LaplaceModel, NonlinearModel, nls_pilot_estimate
from deepfid.rng import RandomSource

from conftest import interior_point

entries = st.floats(-10, 10, allow_nan=False)


# --- D(A) and the Jacobian factor -----------------------------------------------------

def test_identity_gram_root():
    assert gram_det_root(np.eye(2)) == 1.0


def test_laplace_jacobian_hand_example():
    assert jacobian_factor(LaplaceModel(m=2), [0.0, 2.0], [0.0, 1.0]) == pytest.approx(2.0, rel=1e-14)


@given(arrays(float, (2, 2), elements=entries))
def test_square_gram_root_is_abs_det(A):
    # det(A^T A) carries absolute error ~ eps |A|^4, so its root ~ sqrt(eps) |A|^2
    tol = 1e-7 * (1 + np.sum(A * A))
    assert gram_det_root(A) == pytest.approx(abs(np.linalg.det(A)), rel=1e-7, abs=tol)


@given(arrays(float, (5, 2), elements=entries), st.floats(0.01, 100))
def test_gram_root_homogeneous(A, c):
    assert gram_det_root(c * A) == pytest.approx(c**2 * gram_det_root(A), rel=1e-6, abs=1e-6)


@pytest.mark.parametrize("model", [LaplaceModel(m=6), NonlinearModel(), BODModel()], ids=lambda m: m.name)
@pytest.mark.parametrize("seed", range(4))
def test_jacobian_factor_finite_difference(model, seed):
    rng = RandomSource(seed, 2)
    mu = interior_point(model, rng)
    x = model.forward(mu, model.sample_noise(rng))
    z = model.implied_noise(x, mu)
    cols = []
    for j in range(model.param_dim):
        h = 1e-6 * (1 + abs(mu[j]))
        e = np.zeros_like(mu)
        e[j] = h
        cols.append((model.forward(mu + e, z) - model.forward(mu - e, z)) / (2 * h))
    A = np.stack(cols, axis=1)
    expect = math.sqrt(np.linalg.det(A.T @ A))
    assert jacobian_factor(model, x, mu) == pytest.approx(expect, rel=1e-6)


def test_implied_noise_roundtrip():
    for model in (LaplaceModel(m=4), NonlinearModel(), BODModel()):
        rng = RandomSource(3, 0)
        mu = interior_point(model, rng)
        z = model.sample_noise(rng)
        np.testing.assert_allclose(model.implied_noise(model.forward(mu, z), mu), z, rtol=1e-10, atol=1e-12)


def test_log_likelihood_wrapper():
    assert log_likelihood(LaplaceModel(m=1), [0.0], [0.0, 1.0]) == pytest.approx(math.log(0.5))


def test_density_off_domain_is_zero():
    assert log_fiducial_density(NonlinearModel(), np.ones(3), [0.0]) == -np.inf
    assert log_fiducial_density(LaplaceModel(m=3), np.ones(3), [0.0, -1.0]) == -np.inf


# --- grids ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def laplace_case():
    model = LaplaceModel(m=100)
    x, _ = model.simulate(np.array([0.0, 1.0]), RandomSource(21, 0))
    bounds = support_bounds(model, x, [(-1.5, 1.5), (0.3, 2.5)], rel_tol=1e-10)
    return model, x, bounds


def test_grid_normalised(laplace_case):
    model, x, bounds = laplace_case
    g = fiducial_density_grid(model, x, bounds, 200)
    assert abs(g.integral() - 1.0) <= 1e-6
    assert np.all(g.density >= 0)


def test_grid_refinement(laplace_case):
    model, x, bounds = laplace_case
    a = fiducial_density_grid(model, x, bounds, 200)
    b = fiducial_density_grid(model, x, bounds, 400)
    for k in range(2):
        t = np.linspace(*bounds[k], 50)
        assert np.max(np.abs(a.marginal_cdf(k, t) - b.marginal_cdf(k, t))) <= 1e-3


def test_grid_location_shift(laplace_case):
    model, x, bounds = laplace_case
    c = 0.7
    a = fiducial_density_grid(model, x, bounds, 150)
    shifted = [(bounds[0][0] + c, bounds[0][1] + c), bounds[1]]
    b = fiducial_density_grid(model, x + c, shifted, 150)
    np.testing.assert_allclose(b.axes[0] - c, a.axes[0], atol=1e-12)
    np.testing.assert_allclose(b.marginal(0), a.marginal(0), rtol=1e-7, atol=1e-9)


def test_grid_misses_support():
    model = LaplaceModel(m=3)
    with pytest.raises(ZeroDensityError):
        fiducial_density_grid(model, np.ones(3), [(-2.0, -1.0), (-3.0, -2.0)], 10)


def test_grid_median_approached_by_afc(laplace_case):
    model, x, bounds = laplace_case
    g = fiducial_density_grid(model, x, bounds, 300)
    plain = unconditional_samples(model, model.inverse, x, 4000, RandomSource(22, 0))
    ss = afc_auto(model, model.inverse, x, AfcConfig(target_n=4000), RandomSource(22, 0))
    for k in range(2):
        sd = math.sqrt(g.marginal_moments(k)[1])
        gm = float(g.marginal_quantile(k, 0.5))
        gap_afc = abs(gm - float(np.median(ss.samples[:, k])))
        gap_plain = abs(gm - float(np.median(plain.samples[:, k])))
        # finite epsilon leaves a bias that shrinks with the threshold
        assert gap_afc < gap_plain
        assert gap_afc < sd


# --- Metropolis -------------------------------------------------------------------------

def test_metropolis_standard_normal():
    cfg = MetropolisConfig(step_scale=(2.4,), n_samples=50_000, burn_in=2_000, initial=(0.0,))
    ss = metropolis_sample(lambda v: -0.5 * float(v @ v), cfg, RandomSource(30, 0))
    s = ss.samples[:, 0]
    assert abs(s.mean()) < 0.03 and abs(s.var() - 1) < 0.05
    assert abs(np.median(s)) < 0.05
    assert 0.2 < ss.info["move_acceptance"] < 0.7


def test_metropolis_errors():
    with pytest.raises(MetropolisError):
        metropolis_sample(lambda v: -np.inf, MetropolisConfig((1.0,), 10, 0, (0.0,)), RandomSource(1, 0))
    stuck = lambda v: 0.0 if v[0] == 0.0 else -np.inf
    with pytest.raises(MetropolisError, match="step scale"):
        metropolis_sample(stuck, MetropolisConfig((1.0,), 10, 5, (0.0,)), RandomSource(1, 0))
    with pytest.raises(ValueError):
        MetropolisConfig((1.0,), 0, 5, (0.0,))


def test_metropolis_deterministic():
    cfg = MetropolisConfig((1.0, 1.0), 500, 50, (0.0, 0.0))
    f = lambda v: -0.5 * float(v @ v)
    a = metropolis_sample(f, cfg, RandomSource(2, 9)).samples
    b = metropolis_sample(f, cfg, RandomSource(2, 9)).samples
    np.testing.assert_array_equal(a, b)


def test_nonlinear_metropolis_vs_grid():
    model = NonlinearModel()
    x, _ = model.simulate(np.array([2.0]), RandomSource(31, 0))
    bounds = support_bounds(model, x, [(1e-6, 60.0)], n_points=4000, rel_tol=1e-10)
    g = fiducial_density_grid(model, x, bounds, 4000)
    ss = fiducial_metropolis(model, x, g, RandomSource(31, 1), n_samples=20_000, burn_in=2_000)
    assert ks_distance(ss.samples[:, 0], lambda t: g.marginal_cdf(0, t)) <= 0.05


# --- KS distance -------------------------------------------------------------------------

@given(arrays(float, st.integers(1, 40), elements=st.floats(-4, 4, allow_nan=False), unique=True))
def test_ks_matches_brute_force(s):
    ts = np.sort(s)
    n = len(ts)
    brute = max(max(abs((i + 1) / n - norm.cdf(t)), abs(i / n - norm.cdf(t))) for i, t in enumerate(ts))
    assert ks_distance(s, norm.cdf) == pytest.approx(brute, abs=1e-12)


# --- bootstrap ------------------------------------------------------------------------------

def test_bootstrap_bod_centered():
    model = BODModel()
    ss = parametric_bootstrap(model, BOD_OBSERVATION, 1000, RandomSource(40, 0))
    assert ss.info["dropped"] + len(ss.samples) == 1000
    assert abs(np.median(ss.samples[:, 0]) - 0.9) < 0.1 and abs(np.median(ss.samples[:, 1]) - 0.1) < 0.02


def test_bootstrap_mean_consistent_at_small_noise():
    # the nonlinear bias of the refit mean is O(sigma^2), its standard error O(sigma)
    model = BODModel(sigma=0.0015)
    y = model.mean(nls_pilot_estimate(model, BOD_OBSERVATION))
    ss = parametric_bootstrap(model, y, 2000, RandomSource(40, 0))
    t1 = ss.samples[:, 0]
    assert abs(t1.mean() - ss.info["fit"][0]) < 3 * t1.std() / math.sqrt(len(t1))


def test_bootstrap_collapses_without_noise():
    model = BODModel(sigma=1e-12)
    ss = parametric_bootstrap(model, BOD_OBSERVATION, 50, RandomSource(41, 0))
    np.testing.assert_allclose(ss.samples, np.broadcast_to(ss.info["fit"], ss.samples.shape), rtol=1e-6)
    np.testing.assert_allclose(ss.info["fit"], nls_pilot_estimate(model, BOD_OBSERVATION))


def test_default_step_scale(laplace_case):
    model, x, bounds = laplace_case
    g = fiducial_density_grid(model, x, bounds, 100)
    s = default_step_scale(g)
    assert len(s) == 2
    assert s[0] == pytest.approx(2.4 / math.sqrt(2) * math.sqrt(g.marginal_moments(0)[1]))
