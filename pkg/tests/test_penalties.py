"""Penalty constructors: stencils, projectors, spectral properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peer import (
    DimensionMismatch,
    InvalidOrder,
    NonOrthogonalDecomposition,
    ZeroBasis,
    derivative_penalty,
    goutis_penalty,
    identity_penalty,
    multispace_penalty,
    orthonormal_projector,
    projection_penalty,
    stein_penalty,
    svd_prior,
)


def test_second_difference_stencil():
    """Square convention: D2 = D1^2, interior rows carry [1, -2, 1]."""
    p = 8
    D1 = np.eye(p) - np.diag(np.ones(p - 1), 1)
    D1[-1, -1] = 1.0
    L = derivative_penalty(p, order=2).values
    assert np.array_equal(L, D1 @ D1)
    for i in range(p - 2):
        assert np.array_equal(L[i, i : i + 3], [1.0, -2.0, 1.0])
    # invertible by construction, so it is usable as a change of variables
    assert np.linalg.matrix_rank(L) == p
    # interior second differences of a linear trend vanish
    t = np.arange(p, dtype=float)
    assert np.allclose((L @ t)[: p - 2], 0.0)


def test_first_difference_and_identity_orders():
    p = 6
    D1 = np.eye(p) - np.diag(np.ones(p - 1), 1)
    D1[-1, -1] = 1.0
    assert np.array_equal(derivative_penalty(p, order=1).values, D1)
    assert np.array_equal(derivative_penalty(p, order=0).values, np.eye(p))
    assert np.array_equal(identity_penalty(p).values, np.eye(p))


def test_shifted_derivative_adds_identity():
    p = 7
    D2 = derivative_penalty(p, order=2).values
    shifted = derivative_penalty(p, order=2, shift_a=0.25).values
    assert np.array_equal(shifted, D2 + 0.25 * np.eye(p))


def test_derivative_penalty_validation():
    with pytest.raises(InvalidOrder):
        derivative_penalty(8, order=3)
    with pytest.raises(InvalidOrder):
        derivative_penalty(2, order=2)
    with pytest.raises(ValueError):
        derivative_penalty(8, order=2, shift_a=-1.0)


def test_goutis_penalty_reverses_smoothing_spectrum():
    p = 20
    D2 = derivative_penalty(p, order=2).values
    L = goutis_penalty(p).values
    assert np.allclose(L, L.T)
    gram = L.T @ L
    assert np.linalg.norm(gram @ (D2.T @ D2) - np.eye(p)) < 1e-6
    # directions the smoother leaves cheap become expensive here
    w_d2 = np.linalg.eigvalsh(D2.T @ D2)
    w_g = np.linalg.eigvalsh(gram)
    assert np.isclose(w_g[-1], 1.0 / w_d2[0], rtol=1e-8)
    assert np.isclose(w_g[0], 1.0 / w_d2[-1], rtol=1e-8)


def test_stein_penalty_gram_equals_design_gram():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((9, 9))
    L = stein_penalty(X).values
    assert L.shape == (9, 9)
    assert np.linalg.norm(L.T @ L - X.T @ X) < 1e-10 * np.linalg.norm(X.T @ X)


def test_orthonormal_projector_from_redundant_basis():
    rng = np.random.default_rng(1)
    raw = rng.standard_normal((15, 3))
    raw = np.hstack([raw, raw[:, :1] * 2.0])  # redundant column
    prior = orthonormal_projector(raw)
    P = prior.projector
    assert prior.d == 3
    assert np.linalg.norm(P - P.T) < 1e-12
    assert np.linalg.norm(P @ P - P) < 1e-10
    assert np.linalg.norm(P @ raw - raw) < 1e-10  # spans the raw columns
    Q = prior.orthonormal_basis
    assert np.allclose(Q.T @ Q, np.eye(3), atol=1e-12)
    with pytest.raises(ZeroBasis):
        orthonormal_projector(np.zeros((5, 2)))


def test_svd_prior_matches_top_singular_subspace():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((12, 8))
    prior = svd_prior(X, 3)
    _, _, Vt = np.linalg.svd(X)
    P_true = Vt[:3].T @ Vt[:3]
    assert np.linalg.norm(prior.projector - P_true) < 1e-10
    assert prior.source == "svd"


def test_projection_penalty_spectrum():
    rng = np.random.default_rng(3)
    prior = svd_prior(rng.standard_normal((10, 16)), 4)
    a, b = 2.0, 0.5
    L = projection_penalty(prior, a, b).values
    w = np.sort(np.linalg.eigvalsh(L))
    assert np.allclose(w[:4], b, atol=1e-10)
    assert np.allclose(w[4:], a, atol=1e-10)
    # a = b collapses to a scaled identity (ridge)
    assert np.allclose(projection_penalty(prior, 1.3, 1.3).values, 1.3 * np.eye(16))
    assert projection_penalty(prior, a, 0.0).nullspace_dim_hint == 4


def test_multispace_penalty_is_weighted_sum():
    rng = np.random.default_rng(4)
    Q = np.linalg.qr(rng.standard_normal((10, 5)))[0]
    P1 = Q[:, :2] @ Q[:, :2].T
    P2 = Q[:, 2:] @ Q[:, 2:].T
    L = multispace_penalty([P1, P2], [2.0, 0.7]).values
    assert np.allclose(L, 2.0 * P1 + 0.7 * P2)
    v1 = Q[:, 0]
    assert np.allclose(np.linalg.norm(L @ v1) ** 2, 4.0)  # weight enters squared
    with pytest.raises(NonOrthogonalDecomposition):
        multispace_penalty([P1, P1], [1.0, 1.0])
    with pytest.raises(ValueError):
        multispace_penalty([P1], [-1.0])
    with pytest.raises(DimensionMismatch):
        multispace_penalty([P1, P2], [1.0])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(1, 4))
def test_projection_penalty_prior_directions_cost_b(seed, d):
    rng = np.random.default_rng(seed)
    prior = svd_prior(rng.standard_normal((8, 12)), d)
    a = float(10.0 ** rng.uniform(-1, 1))
    b = float(10.0 ** rng.uniform(-2, 1))
    L = projection_penalty(prior, a, b).values
    v = prior.orthonormal_basis @ rng.standard_normal(d)
    v /= np.linalg.norm(v)
    assert np.isclose(np.linalg.norm(L @ v), b, rtol=1e-8)
