"""Shared generators for the test suite.

random_pair draws a (design, penalty) pair from the full penalty
taxonomy with shapes inside the decomposition's window
n <= m <= p <= m + n (m counted after row reduction), so every pair is
admissible by construction.
"""

import numpy as np
import pytest

from peer import (
    derivative_penalty,
    goutis_penalty,
    identity_penalty,
    multispace_penalty,
    orthonormal_projector,
    projection_penalty,
    stein_penalty,
    svd_prior,
)

PAIR_KINDS = (
    "identity",
    "first_diff",
    "second_diff",
    "second_diff_shifted",
    "goutis",
    "stein",
    "projection",
    "projection_truncating",
    "multispace",
    "dense",
    "dense_rankdef",
)


def _design(rng, n, p, ill_conditioned=False):
    X = rng.standard_normal((n, p))
    if ill_conditioned:
        X *= np.logspace(0, -4, p)
    return X


def random_pair(rng, kind=None, n_max=50, p_max=300):
    """One admissible (X, L, kind) triple with randomized shapes."""
    if kind is None:
        kind = PAIR_KINDS[rng.integers(len(PAIR_KINDS))]
    n = int(rng.integers(3, n_max + 1))
    ill = bool(rng.random() < 0.2)

    if kind == "identity":
        p = int(rng.integers(n, p_max + 1))
        X = _design(rng, n, p, ill)
        return X, identity_penalty(p), kind
    if kind in ("first_diff", "second_diff"):
        order = 1 if kind == "first_diff" else 2
        p = int(rng.integers(n + order, p_max + 1))
        X = _design(rng, n, p, ill)
        return X, derivative_penalty(p, order=order), kind
    if kind == "second_diff_shifted":
        p = int(rng.integers(n, p_max + 1))
        X = _design(rng, n, p, ill)
        shift = float(10.0 ** rng.uniform(-3, 1))
        return X, derivative_penalty(p, order=2, shift_a=shift), kind
    if kind == "goutis":
        p = int(rng.integers(n + 2, min(p_max, 120) + 1))  # dense inverse, keep modest
        X = _design(rng, n, p, ill)
        return X, goutis_penalty(p), kind
    if kind == "stein":
        # L = S V' spans only the row space of X, so the stacked pair has
        # full column rank only when p = n
        p = n
        X = _design(rng, n, p, ill)
        return X, stein_penalty(X), kind
    if kind in ("projection", "projection_truncating"):
        p = int(rng.integers(n + 2, p_max + 1))
        X = _design(rng, n, p, ill)
        d = int(rng.integers(1, min(n, p - n) + 1))
        prior = svd_prior(X, d)
        a = float(10.0 ** rng.uniform(-1, 2))
        b = 0.0 if kind == "projection_truncating" else float(10.0 ** rng.uniform(-2, 1))
        return X, projection_penalty(prior, a, b), kind
    if kind == "multispace":
        p = int(rng.integers(n + 4, p_max + 1))
        X = _design(rng, n, p, ill)
        basis = np.linalg.qr(rng.standard_normal((p, 4)))[0]
        P1 = basis[:, :2] @ basis[:, :2].T
        P2 = basis[:, 2:] @ basis[:, 2:].T
        P3 = np.eye(p) - basis @ basis.T
        w = rng.uniform(0.2, 3.0, size=3)
        return X, multispace_penalty([P1, P2, P3], w), kind
    if kind == "dense":
        p = int(rng.integers(n, p_max + 1))
        m = int(rng.integers(max(n, p - n), p + 1))
        X = _design(rng, n, p, ill)
        return X, rng.standard_normal((m, p)), kind
    if kind == "dense_rankdef":
        # duplicated rows: effective m drops back inside the window
        p = int(rng.integers(n + 1, p_max + 1))
        m_eff = int(rng.integers(max(n, p - n), p))
        base = rng.standard_normal((m_eff, p))
        dup = base[rng.integers(m_eff, size=3), :] * rng.standard_normal((3, 1))
        return _design(rng, n, p, ill), np.vstack([base, dup]), kind
    raise ValueError(kind)


def penalty_matrix(L):
    """Plain ndarray view of a penalty in either representation."""
    return L.values if hasattr(L, "values") else np.asarray(L, dtype=float)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
