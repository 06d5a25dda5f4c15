import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import random_model
from oracles import taylor_expm
from slm_bmpc.thermal_model import (DiscretizationError, GridGeometry, ThermalParams,
                                    build_incidence, continuous_matrix, discretize)

LAYER = ThermalParams.from_layer(dz=5e-5, c=8.5e-8)


def taylor_pair(Ac, ts):
    """exp(-Ac ts) and its integral from the augmented matrix [[-Ac, I], [0, 0]]."""
    n = Ac.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -Ac * ts
    M[:n, n:] = np.eye(n) * ts
    E = taylor_expm(M)
    return E[:n, :n], E[:n, n:]


def test_incidence_of_a_row_of_three():
    D = build_incidence(GridGeometry(3, 1))
    np.testing.assert_array_equal(D, [[1, 0], [-1, 1], [0, -1]])


def test_incidence_2x2_links_and_degrees():
    g = GridGeometry(2, 2)
    D = build_incidence(g)
    assert D.shape == (4, 4)
    np.testing.assert_array_equal(np.abs(D).sum(axis=0), 2)
    np.testing.assert_array_equal(D.sum(axis=0), 0)
    np.testing.assert_array_equal(np.diag(D @ D.T), [2, 2, 2, 2])


@given(st.integers(1, 6), st.integers(1, 6))
def test_laplacian_rows_sum_to_zero(nx, ny):
    D = build_incidence(GridGeometry(nx, ny))
    L = D @ D.T
    np.testing.assert_allclose(L.sum(axis=1), 0, atol=1e-12)
    assert D.shape[1] == (nx - 1) * ny + nx * (ny - 1)
    np.testing.assert_array_equal(L, L.T)


def test_node_index_and_centres():
    g = GridGeometry(3, 2, dx=1.0, dy=2.0)
    assert g.node_index(2, 1) == 5
    np.testing.assert_allclose(g.node_centers()[5], [2.5, 3.0])
    assert g.extent == (3.0, 4.0)


def test_layer_substrate_conductivity():
    assert LAYER.k_sub == pytest.approx(1e-3)
    assert LAYER.c == 8.5e-8


def test_layer_diagonal_on_2x2_grid():
    D = build_incidence(GridGeometry(2, 2))
    Ac = continuous_matrix(D, LAYER.k_node, LAYER.k_sub, LAYER.c)
    expected = (2 * LAYER.k_node + LAYER.k_sub) / LAYER.c
    np.testing.assert_allclose(np.diag(Ac), expected, rtol=1e-14)


@pytest.mark.parametrize("shape", [(1, 1), (2, 3), (4, 4)])
def test_discretization_matches_series(shape):
    D = build_incidence(GridGeometry(*shape))
    Ac = continuous_matrix(D, LAYER.k_node, LAYER.k_sub, LAYER.c)
    A, Bint = discretize(Ac, 1e-5)
    A_ref, B_ref = taylor_pair(Ac, 1e-5)
    assert np.max(np.abs(A - A_ref)) <= 1e-10 * np.max(np.abs(A_ref))
    assert np.max(np.abs(Bint - B_ref)) <= 1e-10 * np.max(np.abs(B_ref))


def test_discretization_with_per_node_capacity():
    rng = np.random.default_rng(4)
    D = build_incidence(GridGeometry(3, 3))
    c = 8.5e-8 * rng.uniform(0.7, 1.0, 9)
    k_sub = 1e-3 * rng.uniform(1.0, 1.3, 9)
    Ac = continuous_matrix(D, 1e-3, k_sub, c)
    assert not np.allclose(Ac, Ac.T)
    A, Bint = discretize(Ac, 1e-5, capacity=c)
    A_ref, B_ref = taylor_pair(Ac, 1e-5)
    assert np.max(np.abs(A - A_ref)) <= 1e-10 * np.max(np.abs(A_ref))
    assert np.max(np.abs(Bint - B_ref)) <= 1e-10 * np.max(np.abs(B_ref))


def test_constant_heating_reaches_continuous_steady_state():
    g = GridGeometry(3, 2)
    D = build_incidence(g)
    p = LAYER
    Ac = continuous_matrix(D, p.k_node, p.k_sub, p.c)
    A, Bint = discretize(Ac, 1e-5)
    bc = np.zeros(g.n_nodes)
    bc[1] = 1.0
    B = Bint @ bc / p.c
    x_ss = np.linalg.solve(np.eye(g.n_nodes) - A, B * 10.0)
    # conduction balance: (K_node L + K_sub) x = q
    expected = np.linalg.solve(p.k_node * D @ D.T + p.k_sub * np.eye(g.n_nodes), bc * 10.0)
    np.testing.assert_allclose(x_ss, expected, rtol=1e-9)


def test_free_response_dissipates():
    D = build_incidence(GridGeometry(4, 4))
    A, _ = discretize(continuous_matrix(D, LAYER.k_node, LAYER.k_sub, LAYER.c), 1e-5)
    lam = np.linalg.eigvalsh(0.5 * (A + A.T))
    assert lam.min() > 0 and lam.max() < 1
    x = np.random.default_rng(0).uniform(0, 100, 16)
    norms = []
    for _ in range(50):
        x = A @ x
        norms.append(np.linalg.norm(x))
    assert np.all(np.diff(norms) < 0)


def test_discretize_rejects_bad_input():
    with pytest.raises(DiscretizationError):
        discretize(np.array([[np.nan]]), 1e-5)
    with pytest.raises(DiscretizationError):
        discretize(np.array([[-1.0]]), 1e-5)
    with pytest.raises(ValueError):
        discretize(np.eye(2), 0.0)


def test_parameter_validation():
    with pytest.raises(ValueError):
        GridGeometry(0, 3)
    with pytest.raises(ValueError):
        GridGeometry(2, 2, dx=-1.0)
    with pytest.raises(ValueError):
        ThermalParams(k_node=1e-3, k_sub=0.0, c=1e-7)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_assembled_model_rows(seed):
    m = random_model(np.random.default_rng(seed), max_nu=10)
    np.testing.assert_allclose(m.Cseq.sum(axis=1), 1.0, rtol=1e-12)
    np.testing.assert_allclose(m.footprints.sum(axis=1), 1.0, rtol=1e-12)
    np.testing.assert_allclose(m.Bseq, m.footprints[:-1] @ m.Bint.T / m.params.c, rtol=1e-12)
    assert m.nu == m.Bseq.shape[0] == m.Cseq.shape[0]
    np.testing.assert_array_equal(m.C(1), m.Cseq[0])
