"""Generalized singular value decomposition of a (design, penalty) pair.

The decomposition used throughout the package factors a design matrix X
(n x p) and a penalty operator L (m x p) jointly as

    X = U [0 S] W^{-1},    L = V [M 0] W^{-1},

with U, V orthonormal, W invertible, and paired spectra sigma_k (ascending)
and mu_k (descending) satisfying sigma_k^2 + mu_k^2 = 1 on the overlap
block.  The trailing d = p - m columns of W span null(L) and carry
sigma = 1, mu = 0.  Penalized least-squares fits, their bias/variance, and
every filter-factor method in the package are series in these factors.

Computation route: full SVD of the stacked matrix Z = [X; L] followed by a
cosine-sine decomposition of the orthogonal left factor split at row n.
This avoids forming cross-product matrices and keeps the factors accurate
for ill-conditioned penalties.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cossin

from .errors import DimensionMismatch, DivisionByZero, RankDeficient

_EPS = np.finfo(float).eps


def _as_design_array(X):
    if isinstance(X, DesignMatrix):
        return X.values
    A = np.asarray(X, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatch(f"design must be 2-d, got shape {A.shape}")
    return A


def _as_penalty_array(L):
    if isinstance(L, PenaltyOperator):
        return L.values
    A = np.asarray(L, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatch(f"penalty must be 2-d, got shape {A.shape}")
    return A


@dataclass(frozen=True)
class DesignMatrix:
    """n x p matrix of sampled predictor curves, one curve per row."""

    values: np.ndarray
    centered: bool = False

    def __post_init__(self):
        A = np.asarray(self.values, dtype=float)
        if A.ndim != 2:
            raise DimensionMismatch(f"design must be 2-d, got shape {A.shape}")
        if not np.isfinite(A).all():
            raise ValueError("design matrix contains non-finite entries")
        n, p = A.shape
        if n < 2 or p < 2:
            raise DimensionMismatch(f"need n >= 2 and p >= 2, got {n} x {p}")
        if self.centered:
            scale = np.abs(A).max(axis=0)
            bad = np.abs(A.mean(axis=0)) > 1e-12 * scale
            if bad.any():
                raise ValueError(
                    f"centered flag set but column {int(np.argmax(bad))} has nonzero mean"
                )
        object.__setattr__(self, "values", A)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]


_PENALTY_KINDS = (
    "identity",
    "derivative",
    "projection",
    "multispace",
    "goutis",
    "stein",
    "custom",
)


@dataclass(frozen=True)
class PenaltyOperator:
    """m x p penalty matrix with a kind tag and structural metadata.

    nullspace_dim_hint is the constructor's knowledge of dim(null(L));
    it is advisory (compute_gsvd re-derives d from numerical rank).
    """

    values: np.ndarray
    kind: str = "custom"
    nullspace_dim_hint: int | None = None

    def __post_init__(self):
        A = np.asarray(self.values, dtype=float)
        if A.ndim != 2:
            raise DimensionMismatch(f"penalty must be 2-d, got shape {A.shape}")
        if not np.isfinite(A).all():
            raise ValueError("penalty matrix contains non-finite entries")
        m, p = A.shape
        if m > p:
            raise DimensionMismatch(f"penalty has more rows than columns ({m} x {p})")
        if self.kind not in _PENALTY_KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.kind == "projection":
            scale = np.abs(A).max() or 1.0
            if np.abs(A - A.T).max() > 1e-12 * scale:
                raise ValueError("projection penalty must be symmetric")
        object.__setattr__(self, "values", A)

    @property
    def m(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class GsvdFactors:
    """Joint factors of (X, L) under the ascending-sigma convention.

    sigma and mu index the last n columns of W (the only ones a fit uses);
    sigma_full and mu_full cover all p columns, leading block first.
    penalty_reduced is the operator actually decomposed: L itself when L
    has full row rank, otherwise a row reduction preserving L'L.
    """

    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    Wtilde: np.ndarray
    sigma: np.ndarray
    mu: np.ndarray
    gamma: np.ndarray
    q: int
    d: int
    rank_tol: float
    n: int
    m: int
    p: int
    sigma_full: np.ndarray
    mu_full: np.ndarray
    penalty_reduced: np.ndarray

    @property
    def Winv(self):
        return self.Wtilde.T

    @property
    def Wn(self):
        """Last n columns of W, indexed to match sigma/mu."""
        return self.W[:, self.p - self.n :]

    @property
    def Wnull(self):
        """Last d columns of W; they span null(L)."""
        return self.W[:, self.p - self.d :] if self.d > 0 else self.W[:, :0]


def reduce_penalty_rows(L, tol=None):
    """Replace L by a full-row-rank matrix with the same L'L.

    Uses L = (U S V')  ->  diag(s_r) V_r' over the numerically nonzero
    singular values, so ||L beta|| is unchanged for every beta.  Returns
    (reduced, rank).  Raises RankDeficient when L is numerically zero.
    """
    A = _as_penalty_array(L) if not isinstance(L, np.ndarray) else L
    m, p = A.shape
    s, Vt = np.linalg.svd(A, full_matrices=False)[1:]
    if tol is None:
        tol = max(m, p) * _EPS * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum())
    if rank == 0:
        raise RankDeficient("L", 0, 1)
    if rank == m:
        return A, m
    return s[:rank, None] * Vt[:rank], rank


def _cs_blocks(Q, n, p):
    """CS decomposition of the (n+m) x p orthonormal-column block of Q.

    Returns (U1, U2, V1h, sigma_col, mu_col, row1, row2) where sigma_col
    and mu_col are the per-column cosines/sines of the first p columns of
    Q split at row n, and row1/row2 map each column to its row index in
    the structurally diagonal middle factors (-1 where absent).
    """
    total = Q.shape[0]
    m = total - n
    if p == total:
        # Empty right partition: the split rows of Q each have exactly
        # orthonormal rows, so the middle factors are 0/1 indicator blocks
        # and no rotation is needed.
        Q1 = Q[:n, :]
        Q2 = Q[n:, :]
        U1 = np.eye(n)
        U2 = np.eye(m)
        V1h = np.vstack([Q2, Q1])
        sigma_col = np.concatenate([np.zeros(m), np.ones(n)])
        mu_col = np.concatenate([np.ones(m), np.zeros(n)])
        row1 = np.concatenate([np.full(m, -1, dtype=int), np.arange(n)])
        row2 = np.concatenate([np.arange(m), np.full(n, -1, dtype=int)])
        return U1, U2, V1h, sigma_col, mu_col, row1, row2

    u, cs, vdh = cossin(Q, p=n, q=p)
    U1 = u[:n, :n]
    U2 = u[n:, n:]
    V1h = vdh[:p, :p]
    D11 = cs[:n, :p]
    D21 = cs[n:, :p]

    cols = np.arange(p)
    row1 = np.argmax(np.abs(D11), axis=0)
    sigma_col = D11[row1, cols]
    row1 = np.where(sigma_col != 0.0, row1, -1)
    row2 = np.argmax(np.abs(D21), axis=0)
    mu_col = D21[row2, cols]
    row2 = np.where(mu_col != 0.0, row2, -1)
    return U1, U2, V1h, sigma_col, mu_col, row1, row2


def compute_gsvd(X, L):
    """Decompose the pair (X, L); see the module docstring for the form.

    Preconditions: rank(X) = n, rank of the stacked [X; L] equals p, and
    the shape window n <= m <= p <= m + n holds after L is reduced to
    full row rank.  Rank decisions use
    rank_tol = max(n+m, p) * eps * sigma_max([X; L]).
    """
    Xa = _as_design_array(X)
    La = _as_penalty_array(L)
    n, p = Xa.shape
    if La.shape[1] != p:
        raise DimensionMismatch(
            f"design has p = {p} columns but penalty has {La.shape[1]}"
        )

    La_red, m = reduce_penalty_rows(La)
    if not (n <= m <= p <= m + n):
        raise DimensionMismatch(
            f"shape window n <= m <= p <= m+n fails: n={n}, m={m} (effective), p={p}"
        )

    Z = np.vstack([Xa, La_red])
    U_z, s_z, Vt_z = np.linalg.svd(Z, full_matrices=True)
    rank_tol = max(n + m, p) * _EPS * s_z[0]
    rank_z = int((s_z[:p] > rank_tol).sum())
    if rank_z < p:
        raise RankDeficient("stacked", rank_z, p)
    s_x = np.linalg.svd(Xa, compute_uv=False)
    rank_x = int((s_x > rank_tol).sum())
    if rank_x < n:
        raise RankDeficient("X", rank_x, n)

    U1, U2, V1h, sigma_col, mu_col, row1, row2 = _cs_blocks(U_z, n, p)

    order = np.argsort(sigma_col, kind="stable")
    sigma_full = sigma_col[order]
    mu_full = mu_col[order]
    row1 = row1[order]
    row2 = row2[order]

    # Shared right factor: W^{-1} = V1h diag(s_z) V_z', W = V_z diag(1/s_z) V1,
    # and Wtilde = (W')^{-1} is just W^{-1} transposed.
    V1 = V1h.T
    Winv = (V1h * s_z[:p]) @ Vt_z
    W = Vt_z.T @ (V1 / s_z[:p, None])
    W = W[:, order]
    Winv = Winv[order, :]
    Wtilde = Winv.T

    d = p - m
    q = n + m - p
    u_rows = row1[p - n :]
    v_rows = row2[:m]
    if sorted(u_rows) != list(range(n)) or sorted(v_rows) != list(range(m)):
        # A structurally absent cosine/sine inside the overlap block means
        # the pair is degenerate beyond what the rank checks caught.
        raise RankDeficient("stacked", rank_z, p)
    U = U1[:, u_rows]
    V = U2[:, v_rows]

    sigma = sigma_full[p - n :]
    mu = mu_full[p - n :]
    with np.errstate(divide="ignore"):
        gamma = sigma[:q] / mu[:q]

    return GsvdFactors(
        U=U,
        V=V,
        W=W,
        Wtilde=Wtilde,
        sigma=sigma,
        mu=mu,
        gamma=gamma,
        q=q,
        d=d,
        rank_tol=rank_tol,
        n=n,
        m=m,
        p=p,
        sigma_full=sigma_full,
        mu_full=mu_full,
        penalty_reduced=La_red,
    )


def filter_expansion(factors, y, filters):
    """Series evaluation of a filtered estimate in the GSVD basis.

    Returns

        sum_{k<=n-d} f_k (1/sigma_k) (u_k'y) w_k  +  sum_{k>n-d} (u_k'y) w_k

    over the last-n columns of W.  With f_k = sigma_k^2/(sigma_k^2 +
    alpha mu_k^2) this is the penalized least-squares estimate; other
    filter vectors give truncated or tapered variants.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size != factors.n:
        raise DimensionMismatch(f"y has length {y.size}, expected {factors.n}")
    f = np.asarray(filters, dtype=float).ravel()
    nd = factors.n - factors.d
    if f.size != nd:
        raise DimensionMismatch(f"filters has length {f.size}, expected {nd}")
    if not np.isfinite(f).all():
        raise ValueError("filters contain non-finite entries")
    sigma = factors.sigma
    small = sigma[:nd] <= factors.rank_tol
    if np.any((f > 0) & small):
        raise DivisionByZero("positive filter on a numerically zero sigma_k")

    coef = np.empty(factors.n)
    uy = factors.U.T @ y
    with np.errstate(divide="ignore", invalid="ignore"):
        coef[:nd] = np.where(f > 0, f / sigma[:nd], 0.0) * uy[:nd]
    coef[nd:] = uy[nd:]
    return factors.Wn @ coef


def _elden_pieces(Xa, La):
    """Shared pinv computation behind weighted_pinv and standard_form.

    Returns (LXdag, K, Lp) with LXdag = (I - K X) L^+ the X-weighted
    generalized inverse, K = [X(I - L^+ L)]^+, and L^+ the plain
    pseudoinverse of L.
    """
    n, p = Xa.shape
    m = La.shape[0]
    # Forming I - L^+ L by subtraction leaves residue of size eps*cond(L)
    # that X then amplifies, so build the null-space projector from an
    # exactly orthonormal basis instead: X(I - L^+L) = (X Nb) Nb' with
    # Nb the trailing right singular vectors, and the pinv factors as
    # Nb (X Nb)^+.
    Ul, sl, Vlt = np.linalg.svd(La, full_matrices=True)
    tol = max(m, p) * _EPS * (sl[0] if sl.size else 0.0)
    rank = int((sl > tol).sum())
    if rank == 0:
        raise RankDeficient("L", 0, 1)
    Lp = Vlt[:rank].T @ (Ul[:, :rank] / sl[:rank]).T
    if rank == p:
        K = np.zeros((p, n))
    else:
        Nb = Vlt[rank:].T
        K = Nb @ np.linalg.pinv(Xa @ Nb)
    LXdag = (np.eye(p) - K @ Xa) @ Lp
    return LXdag, K, Lp


def weighted_pinv(X, L):
    """X-weighted generalized inverse of L: (I - [X(I-L^+L)]^+ X) L^+.

    Reduces to L^{-1} when L is invertible.  Requires the stacked [X; L]
    to have full column rank so the associated penalized problem is
    well posed.
    """
    Xa = _as_design_array(X)
    La = _as_penalty_array(L)
    if La.shape[1] != Xa.shape[1]:
        raise DimensionMismatch(
            f"design has p = {Xa.shape[1]} columns but penalty has {La.shape[1]}"
        )
    p = Xa.shape[1]
    s_z = np.linalg.svd(np.vstack([Xa, La]), compute_uv=False)
    rank_tol = max(sum(A.shape[0] for A in (Xa, La)), p) * _EPS * s_z[0]
    rank_z = int((s_z > rank_tol).sum())
    if rank_z < p:
        raise RankDeficient("stacked", rank_z, p)
    return _elden_pieces(Xa, La)[0]
