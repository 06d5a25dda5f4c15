import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import random_model
from scenarios import filter_versus_generic
from slm_bmpc import estimator as est
from slm_bmpc.lifted_model import build_lifted


def small_G(seed=0, nu=6):
    return build_lifted(random_model(np.random.default_rng(seed), nu=nu)).G


def test_integrated_noise_pattern():
    np.testing.assert_array_equal(est.integrated_noise_cov(3, 1.0), [[1, 1, 1], [1, 2, 2], [1, 2, 3]])
    np.testing.assert_allclose(est.integrated_noise_cov(2, 0.5), [[0.25, 0.25], [0.25, 0.5]])


def test_integrated_noise_monte_carlo():
    rng = np.random.default_rng(0)
    sigma, nu, n = 0.8, 5, 200_000
    walks = np.cumsum(rng.normal(0, sigma, size=(n, nu)), axis=1)
    emp = walks.T @ walks / n
    np.testing.assert_allclose(emp, est.integrated_noise_cov(nu, sigma), rtol=0.03, atol=0.02)


def test_layer_noise_covariance_monte_carlo():
    # lifted noise of one layer is -(G v + w) with white v, w
    rng = np.random.default_rng(1)
    G = small_G(nu=4)
    V, W, n = 0.16, 25.0, 200_000
    v = rng.normal(0, np.sqrt(V), size=(n, 4))
    w = rng.normal(0, np.sqrt(W), size=(n, 4))
    samples = -(v @ G.T + w)
    emp = samples.T @ samples / n
    noise = est.build_covariances(G, V, W, sigma_vbar=0.0, sigma_wbar=0.0)
    scale = np.sqrt(np.outer(np.diag(noise.Wbar), np.diag(noise.Wbar)))
    assert np.max(np.abs(emp - noise.Wbar) / scale) < 0.02


def test_tuning_term_adds_to_the_diagonal():
    G = small_G()
    a = est.build_covariances(G, 0.16, 25.0, 0.8, 0.0)
    b = est.build_covariances(G, 0.16, 25.0, 0.8, 70.0)
    np.testing.assert_allclose(b.Wbar - a.Wbar, 4900.0 * np.eye(6))
    with pytest.raises(ValueError):
        est.build_covariances(G, -1.0, 1.0, 0.8, 70.0)


def test_scalar_fixed_point():
    # nu = 1: p = (p + v) - (p + v)^2 / (p + v + w)  =>  p^2 + v p - v w = 0
    v, wbar = 0.8**2, 70.0**2
    noise = est.build_covariances(np.array([[1.0]]), 0.0, 0.0, 0.8, 70.0)
    eps = est.default_epsilon(noise)
    w = wbar + eps
    sched = est.compute_gain_schedule(noise, eps=eps)
    p = (-v + np.sqrt(v * v + 4 * v * w)) / 2
    assert sched.boundary_cov[0, 0] == pytest.approx(p, rel=1e-9)
    a = p + v
    assert sched.K(1)[0] == pytest.approx(a / (a + w), rel=1e-9)
    # e itself is observed almost exactly
    assert sched.K(1)[1] == pytest.approx((a + wbar) / (a + w), rel=1e-9)


def test_no_uncertainty_means_no_correction():
    noise = est.build_covariances(small_G(), 0.0, 0.0, 0.0, 0.0)
    sched = est.compute_gain_schedule(noise, eps=1e-9)
    np.testing.assert_array_equal(sched.gains, 0.0)


def test_schedule_is_periodic():
    noise = est.build_covariances(small_G(nu=10), 0.16, 25.0, 0.8, 70.0)
    eps = est.default_epsilon(noise)
    sched = est.compute_gain_schedule(noise, eps=eps)
    assert sched.converged
    gains, P = est.layer_pass(est.boundary_covariance(sched.boundary_cov, noise), eps)
    np.testing.assert_allclose(gains, sched.gains, atol=1e-9)
    np.testing.assert_allclose(P[:10, :10], sched.boundary_cov, rtol=1e-8, atol=1e-8)


def test_learning_gain_grows_with_sigma():
    G = small_G(nu=10)
    norms = []
    for sigma in (0.0, 0.1, 0.8, 25.0):
        noise = est.build_covariances(G, 0.16, 25.0, sigma, 70.0)
        sched = est.compute_gain_schedule(noise, max_cycles=50)
        norms.append(np.abs(sched.gains[:, :10]).max())
    assert norms == sorted(norms)
    assert norms[0] < 0.05 * norms[2]


def test_unreachable_tolerance_is_reported():
    noise = est.build_covariances(small_G(nu=4), 0.16, 25.0, 0.8, 70.0)
    sched = est.compute_gain_schedule(noise, tol=0.0, max_cycles=3)
    assert not sched.converged and sched.iterations_to_converge == 5
    with pytest.raises(est.GainScheduleError, match="did not converge"):
        est.compute_gain_schedule(noise, tol=0.0, max_cycles=3, raise_on_failure=True)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.1, 0.8, 25.0]))
def test_matches_textbook_filter(seed, sigma):
    dx, dk = filter_versus_generic(nu=10, layers=3, seed=seed, sigma_vbar=sigma)
    assert dx <= 1e-10
    assert dk <= 1e-9


def test_filter_steps():
    yd = np.array([1.0, 2.0, 3.0])
    s = est.initial_state(yd)
    np.testing.assert_array_equal(s.e, yd)
    s = est.prior_update(s, np.array([0.0, 1.0, 1.0]), 2.0)
    np.testing.assert_array_equal(s.e, [1.0, 0.0, 1.0])
    np.testing.assert_array_equal(s.ebar, s.e)
    K = np.array([0.1, 0.2, 0.3, 0.5, 0.6, 0.7])
    s = est.measurement_update(s, K, e_meas=3.0, t=1)  # innovation 2
    np.testing.assert_allclose(s.ebar, [1.2, 0.4, 1.6])
    np.testing.assert_allclose(s.e, [2.0, 1.2, 2.4])
    r = est.layer_reset(s)
    np.testing.assert_array_equal(r.e, s.ebar)
    assert (r.t, r.k) == (0, 1)


def test_gain_cache_round_trip(tmp_path):
    G = small_G(nu=5)
    noise = est.build_covariances(G, 0.16, 25.0, 0.8, 70.0)
    first = est.cached_gain_schedule(G, noise, tmp_path)
    assert len(list(tmp_path.glob("gains-*.npz"))) == 1
    second = est.cached_gain_schedule(G, noise, tmp_path)
    np.testing.assert_array_equal(first.gains, second.gains)
    other = est.build_covariances(G, 0.16, 25.0, 0.1, 70.0)
    est.cached_gain_schedule(G, other, tmp_path)
    assert len(list(tmp_path.glob("gains-*.npz"))) == 2
