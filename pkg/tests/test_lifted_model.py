import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import random_model
from oracles import step_simulate
from slm_bmpc.lifted_model import build_lifted, predict_error

seeds = st.integers(0, 2**32 - 1)


def test_single_sample_horizon():
    m = random_model(np.random.default_rng(0), nu=1)
    G = build_lifted(m).G
    assert G.shape == (1, 1)
    assert G[0, 0] == pytest.approx(m.C(1) @ m.B(0), rel=1e-14)


def test_two_sample_horizon():
    m = random_model(np.random.default_rng(1), nu=2)
    G = build_lifted(m).G
    expected = np.array([[m.C(1) @ m.B(0), 0.0],
                         [m.C(2) @ m.A @ m.B(0), m.C(2) @ m.B(1)]])
    np.testing.assert_allclose(G, expected, rtol=1e-13)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_matches_step_simulation(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, max_nu=30)
    u = rng.uniform(0, 20, m.nu)
    y = step_simulate(m.A, m.Bseq, m.Cseq, u)
    np.testing.assert_allclose(build_lifted(m).G @ u, y, rtol=1e-12, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_causal_and_linear(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, max_nu=20)
    G = build_lifted(m).G
    assert np.all(np.triu(G, 1) == 0)
    assert np.all(np.diag(G) > 0)
    u1, u2 = rng.normal(size=(2, m.nu))
    a, b = rng.normal(size=2)
    np.testing.assert_allclose(G @ (a * u1 + b * u2), a * (G @ u1) + b * (G @ u2), atol=1e-9)
    # an input change at sample j cannot move outputs before j + 1
    j = int(rng.integers(0, m.nu))
    du = np.zeros(m.nu)
    du[j] = 1.0
    assert np.all((G @ du)[:j] == 0)


def test_horizon_blocks_shrink_at_the_end():
    m = random_model(np.random.default_rng(2), nu=10)
    L = build_lifted(m)
    assert L.horizon_block(0, 4).shape == (10, 4)
    assert L.horizon_block(8, 4).shape == (10, 2)
    np.testing.assert_array_equal(L.column(3), L.G[:, 3])
    h = L.selector(3)
    assert h.sum() == 1 and h[2] == 1


def test_prediction_over_the_full_layer():
    m = random_model(np.random.default_rng(3), nu=8)
    G = build_lifted(m).G
    yd = np.linspace(100, 800, 8)
    u = np.full(8, 5.0)
    np.testing.assert_allclose(predict_error(yd, G, u), yd - G @ u)
    with pytest.raises(ValueError):
        predict_error(yd, G[:, :3], u)
