import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from deepfid.models import (BOD_DESIGN, BOD_OBSERVATION, BOD_SIGMA, BODModel, ConvergenceError,
                            DegenerateInputError, DomainError, LaplaceModel, ModelError,
                            NonlinearModel, laplace_inverse, least_squares_fit, make_model,
                            nls_pilot_estimate, nonlinear_argmin_inverse, sort_preprocess)
from deepfid.rng import RandomSource

from conftest import interior_point

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


# --- forward ----------------------------------------------------------------

def test_laplace_forward_identity():
    m = LaplaceModel(m=2)
    np.testing.assert_array_equal(m.forward([0.0, 1.0], [0.5, -0.5]), [0.5, -0.5])


def test_nonlinear_forward_zero_noise():
    np.testing.assert_array_equal(NonlinearModel().forward([1.0], [0, 0, 0]), [1, 1, 1])


def test_bod_forward_first_design_point():
    y = BODModel().forward([0.9, 0.1], np.zeros(5))
    assert y[0] == pytest.approx(0.9 * (1 - math.exp(-0.2)), abs=1e-15)
    assert y[0] == pytest.approx(0.163142, abs=1e-6)


def test_forward_errors():
    with pytest.raises(ModelError):
        NonlinearModel().forward([1.0], [0, 0])
    with pytest.raises(DomainError):
        NonlinearModel().forward([-0.1], [0, 0, 0])
    with pytest.raises(DomainError):
        LaplaceModel(m=3).forward([0.0, -1.0], [0, 0, 0])


def test_forward_rejects_nonfinite():
    with pytest.raises(ModelError):
        LaplaceModel(m=2).forward([np.nan, 1.0], [0, 0])


# --- gradients --------------------------------------------------------------

def test_nonlinear_gradient_examples():
    m = NonlinearModel()
    np.testing.assert_array_equal(m.param_gradient([1.0], [0, 0, 0]), np.ones((3, 1)))
    np.testing.assert_allclose(m.param_gradient([4.0], [1, 1, 1]), np.full((3, 1), 4.0))


def test_bod_gradient_example():
    A = BODModel().param_gradient([0.9, 0.1], np.zeros(5))
    assert A.shape == (5, 2)
    np.testing.assert_allclose(A[0], [1 - math.exp(-0.2), 0.9 * 2 * math.exp(-0.2)], rtol=1e-14)
    np.testing.assert_allclose(A[0], [0.181269, 1.473715], atol=1e-6)


def test_gradient_at_boundary_is_error():
    with pytest.raises(DomainError):
        NonlinearModel().param_gradient([0.0], [0, 0, 0])


def central_difference(model, mu, z):
    cols = []
    for j in range(len(mu)):
        h = 1e-5 * (1 + abs(mu[j]))
        e = np.zeros_like(mu)
        e[j] = h
        cols.append((model.forward(mu + e, z) - model.forward(mu - e, z)) / (2 * h))
    return np.stack(cols, axis=-1)


@pytest.mark.parametrize("model", [LaplaceModel(m=7), NonlinearModel(), BODModel()], ids=lambda m: m.name)
@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(model, seed):
    rng = RandomSource(seed, 1)
    mu = interior_point(model, rng)
    z = model.sample_noise(rng)
    A = model.param_gradient(mu, z)
    assert A.shape == (model.data_dim, model.param_dim)
    fd = central_difference(model, mu, z)
    np.testing.assert_allclose(A, fd, rtol=1e-6, atol=1e-9)


# --- noise ------------------------------------------------------------------

def test_laplace_noise_moments():
    z = LaplaceModel(m=1000).sample_noise(RandomSource(3, 0), 1000)
    assert abs(z.mean()) < 0.01
    # Var(z^2) for standard Laplace is 24 - 4 = 20
    assert abs(z.var() - 2.0) < 3 * math.sqrt(20 / z.size)
    assert abs(z.var() - 2.0) < 0.05


def test_normal_noise_variance():
    z = NonlinearModel(m=1000).sample_noise(RandomSource(4, 0), 1000)
    assert abs(z.var() - 1.0) < 3 * math.sqrt(2 / z.size)


def test_bod_noise_scale():
    m = BODModel()
    assert m.sigma == BOD_SIGMA == 0.015
    z = m.sample_noise(RandomSource(5, 0), 200_000)
    assert abs(z.std() - 0.015) < 1e-4


def test_noise_determinism():
    m = LaplaceModel(m=100)
    a = m.sample_noise(RandomSource(9, 2), 3)
    b = m.sample_noise(RandomSource(9, 2), 3)
    c = m.sample_noise(RandomSource(9, 3), 3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_noise_chunking_does_not_matter():
    m = NonlinearModel(m=5)
    r1 = RandomSource(1, 1)
    r2 = RandomSource(1, 1)
    whole = m.sample_noise(r1, 10)
    parts = np.concatenate([m.sample_noise(r2, 3), m.sample_noise(r2, 7)])
    np.testing.assert_array_equal(whole, parts)


# --- laplace_inverse --------------------------------------------------------

def test_laplace_inverse_hand_example():
    mu = laplace_inverse([1.0, 2.0, 3.0], [-1.0, 0.0, 1.0])
    np.testing.assert_allclose(mu, [2.0, 1.0], atol=1e-15)


def test_laplace_inverse_self():
    z = RandomSource(1, 0).laplace(50)
    np.testing.assert_allclose(laplace_inverse(z, z), [0.0, 1.0], atol=1e-13)


def test_laplace_inverse_interpolates_two_points():
    x, z = np.array([0.3, -1.2]), np.array([2.0, 0.5])
    th, s = laplace_inverse(x, z)
    np.testing.assert_allclose(th + s * z, x, atol=1e-14)


def test_model_inverse_projects_negative_scale():
    # OLS gives sigma = -1 here; on sigma >= 0 the minimiser is (mean(x), 0)
    np.testing.assert_allclose(laplace_inverse([1.0, 2.0, 3.0], [1.0, 0.0, -1.0]), [2.0, -1.0])
    np.testing.assert_array_equal(LaplaceModel(m=3).inverse(np.array([1.0, 2.0, 3.0]), np.array([[1.0, 0.0, -1.0]])),
                                  [[2.0, 0.0]])


def test_laplace_inverse_degenerate():
    with pytest.raises(DegenerateInputError):
        laplace_inverse([1.0, 2.0, 3.0], [0.7, 0.7, 0.7])


def test_laplace_inverse_vs_normal_equations():
    rng = RandomSource(77, 0)
    worst = 0.0
    for _ in range(1000):
        m = 2 + int(rng.integers(0, 40))
        x = rng.normal(m) * 3 + 1
        z = rng.laplace(m)
        mu = laplace_inverse(x, z)
        D = np.column_stack([np.ones(m), z])
        oracle = np.linalg.solve(D.T @ D, D.T @ x)
        worst = max(worst, np.max(np.abs(mu - oracle) / np.maximum(1, np.abs(oracle))))
    assert worst <= 1e-12


@given(arrays(float, 6, elements=finite), arrays(float, 6, elements=finite))
def test_laplace_inverse_residual_orthogonal(x, z):
    if np.ptp(z) < 1e-3:
        return
    th, s = laplace_inverse(x, z)
    r = x - th - s * z
    scale = 1 + np.abs(x).sum() + np.abs(s) * np.abs(z).sum()
    assert abs(r.sum()) <= 1e-9 * scale
    assert abs(r @ (z - z.mean())) <= 1e-9 * scale * (1 + np.abs(z).max())


# --- sorting ----------------------------------------------------------------

@given(arrays(float, 5, elements=finite), arrays(float, 5, elements=finite))
def test_sorted_inverse_has_nonnegative_scale(x, z):
    xs, zs = sort_preprocess(x, z)
    if np.ptp(zs) < 1e-3:
        return
    assert laplace_inverse(xs, zs)[1] >= 0
    np.testing.assert_array_equal(LaplaceModel(m=5).inverse(xs, zs), laplace_inverse(xs, zs))


def test_sort_preprocess():
    x, z = sort_preprocess([3.0, 1.0, 2.0], [0.0, -1.0, 5.0])
    np.testing.assert_array_equal(x, [1, 2, 3])
    np.testing.assert_array_equal(z, [-1, 0, 5])


@given(arrays(float, 8, elements=finite), arrays(float, 8, elements=finite))
def test_sort_preprocess_idempotent(x, z):
    a = sort_preprocess(x, z)
    b = sort_preprocess(*a)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_sorting_reduces_residual():
    model = LaplaceModel(m=100)
    rng = RandomSource(8, 0)
    plain, sorted_ = [], []
    for _ in range(1000):
        x = model.sample_noise(rng) * 1.3 + 0.2
        z = model.sample_noise(rng)
        for xs, zs, acc in ((x, z, plain), (*sort_preprocess(x, z), sorted_)):
            th, s = laplace_inverse(xs, zs)
            acc.append(np.linalg.norm(xs - th - s * zs))
    assert np.mean(sorted_) < np.mean(plain)


# --- argmin property of the inverses ----------------------------------------

@pytest.mark.parametrize("seed", range(4))
def test_laplace_inverse_beats_grid(seed):
    model = LaplaceModel(m=10)
    rng = RandomSource(10, seed)
    x = model.sample_noise(rng)
    z = model.sample_noise(rng)
    best = np.linalg.norm(x - model.forward(model.inverse(x, z), z))
    grid = [(t, v) for t in np.linspace(-3, 3, 200) for v in np.linspace(0, 4, 200)]
    G = np.array(grid)
    res = np.linalg.norm(x - (G[:, :1] + G[:, 1:] * z), axis=1)
    assert best <= res.min() + 1e-12


@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_nonlinear_argmin_beats_grid(q):
    model = NonlinearModel(m=3, q=q)
    rng = RandomSource(11, q)
    grid = np.linspace(0, 20, 200)
    for _ in range(50):
        x = rng.normal(3) * 4 + 2
        z = rng.normal(3)
        mu = nonlinear_argmin_inverse(x, z[None], q)[0]
        best = np.linalg.norm(x - model.forward(mu, z))
        res = np.linalg.norm(x - model.forward(grid[:, None], np.broadcast_to(z, (200, 3))), axis=1)
        assert best <= res.min() + 1e-9


# --- least squares / pilot --------------------------------------------------

def test_bod_pilot_reproduces_data():
    model = BODModel()
    fit = nls_pilot_estimate(model, BOD_OBSERVATION)
    assert abs(fit[0] - 0.9) < 0.1 and abs(fit[1] - 0.1) < 0.02
    resid = np.asarray(BOD_OBSERVATION) - model.mean(fit)
    assert np.max(np.abs(resid)) < 3 * BOD_SIGMA
    assert tuple(model.design) == BOD_DESIGN


@pytest.mark.parametrize("mu0", [[1.3, 0.07], [0.5, 0.3], [2.0, 0.02]])
def test_pilot_recovers_noise_free(mu0):
    model = BODModel()
    x = model.forward(mu0, np.zeros(5))
    np.testing.assert_allclose(nls_pilot_estimate(model, x), mu0, atol=1e-8)


def test_nonlinear_pilot_noise_free():
    model = NonlinearModel()
    np.testing.assert_allclose(nls_pilot_estimate(model, model.forward([2.5], np.zeros(3))), [2.5], atol=1e-8)


def test_laplace_pilot_is_mean():
    x = RandomSource(3, 3).normal(100)
    fit = nls_pilot_estimate(LaplaceModel(m=100), x)
    assert fit[0] == pytest.approx(x.mean(), abs=1e-10)


def test_least_squares_nonconvergence_carries_best():
    with pytest.raises(ConvergenceError) as info:
        least_squares_fit(BODModel(), np.array(BOD_OBSERVATION), start=np.array([1.0, 0.5]), max_iter=1)
    assert info.value.best.shape == (2,)


# --- likelihood and registry -------------------------------------------------

def test_laplace_loglik_at_mode():
    assert LaplaceModel(m=1).log_likelihood([0.0], [0.0, 1.0]) == pytest.approx(math.log(0.5))


def test_bod_loglik_zero_residual():
    model = BODModel()
    y = model.mean([0.9, 0.1])
    expect = 5 * (-0.5 * math.log(2 * math.pi * 0.015**2))
    assert model.log_likelihood(y, [0.9, 0.1]) == pytest.approx(expect, rel=1e-13)


def test_bod_loglik_permutation_invariant():
    perm = [3, 0, 4, 1, 2]
    a = BODModel().log_likelihood(BOD_OBSERVATION, [0.8, 0.12])
    design = np.array(BOD_DESIGN)[perm]
    b = BODModel(design=tuple(design)).log_likelihood(np.array(BOD_OBSERVATION)[perm], [0.8, 0.12])
    assert a == pytest.approx(b, rel=1e-14)


def test_registry():
    assert make_model("laplace", m=5).data_dim == 5
    assert make_model("nonlinear-q").param_dim == 1
    assert make_model("bod").param_names == ("t1", "t2")
    with pytest.raises(ModelError):
        make_model("nope")


def test_simulate_is_forward():
    model = NonlinearModel()
    x, z = model.simulate(np.array([2.0]), RandomSource(1, 1))
    np.testing.assert_array_equal(x, model.forward([2.0], z))
