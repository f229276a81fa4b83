"""Penalty operator constructors and subspace priors.

Every constructor returns a :class:`~peer.gsvd.PenaltyOperator`.  The
constructors cover the taxonomy used throughout the package: difference
penalties of order 0/1/2 (optionally shifted by a multiple of the identity),
projection penalties ``a*(I - P) + b*P`` built from a subspace prior,
weighted sums of mutually orthogonal projectors, the inverse-square-root
second-difference penalty, and the row-space penalty built from the SVD of
the design itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyPrior,
    InvalidOrder,
    NonOrthogonalDecomposition,
    RankDeficient,
    ZeroBasis,
)
from .gsvd import PenaltyOperator, _as_design_array

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SubspacePrior:
    """A p-dimensional subspace believed to carry the coefficient signal.

    ``basis`` keeps the raw (possibly non-orthogonal) columns handed in by
    the caller, ``orthonormal_basis`` an orthonormal basis of their span and
    ``projector`` the induced orthogonal projector.  ``source`` records how
    the prior was obtained; priors tagged ``"svd"`` come from the right
    singular subspace of a design matrix, which is what the two-block filter
    estimators require.
    """

    basis: np.ndarray
    orthonormal_basis: np.ndarray
    projector: np.ndarray
    source: str = "custom"

    def __post_init__(self):
        B = np.asarray(self.orthonormal_basis, dtype=float)
        P = np.asarray(self.projector, dtype=float)
        object.__setattr__(self, "basis", np.asarray(self.basis, dtype=float))
        object.__setattr__(self, "orthonormal_basis", B)
        object.__setattr__(self, "projector", P)
        if B.ndim != 2 or B.shape[1] == 0:
            raise EmptyPrior("prior needs at least one basis column")
        if P.shape != (B.shape[0], B.shape[0]):
            raise DimensionMismatch(
                f"projector is {P.shape}, expected {(B.shape[0], B.shape[0])}"
            )
        if not np.allclose(P, P.T, atol=1e-12):
            raise NonOrthogonalDecomposition("projector is not symmetric")
        if not np.allclose(P @ P, P, atol=1e-10):
            raise NonOrthogonalDecomposition("projector is not idempotent")

    @property
    def p(self) -> int:
        return self.orthonormal_basis.shape[0]

    @property
    def d(self) -> int:
        return self.orthonormal_basis.shape[1]


@dataclass(frozen=True)
class GridSpec:
    """Evaluation grid on [0, 1] used by the curve-based constructors."""

    p: int
    t: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.t is None:
            object.__setattr__(self, "t", np.linspace(0.0, 1.0, self.p))
        t = np.asarray(self.t, dtype=float)
        object.__setattr__(self, "t", t)
        if t.shape != (self.p,):
            raise DimensionMismatch(f"grid has {t.shape}, expected ({self.p},)")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid points must be strictly increasing")


def orthonormal_projector(raw_basis) -> SubspacePrior:
    """Build a SubspacePrior from arbitrary basis columns.

    Columns that are numerically zero are dropped; the remaining span is
    orthonormalized through an SVD so nearly dependent columns collapse to
    a single direction instead of producing a rank-deficient projector.
    """
    B = np.atleast_2d(np.asarray(raw_basis, dtype=float))
    if B.ndim != 2:
        raise DimensionMismatch("basis must be a 2-d array of columns")
    if B.shape[1] == 0:
        raise EmptyPrior("no basis columns supplied")
    if not np.all(np.isfinite(B)):
        raise ValueError("basis contains non-finite entries")

    norms = np.linalg.norm(B, axis=0)
    scale = norms.max(initial=0.0)
    if scale == 0.0:
        raise ZeroBasis("all basis columns are zero")
    keep = norms > B.shape[0] * _EPS * scale
    B_kept = B[:, keep]

    U, s, _ = np.linalg.svd(B_kept, full_matrices=False)
    rank = int(np.count_nonzero(s > max(B.shape) * _EPS * s[0]))
    if rank == 0:
        raise ZeroBasis("basis columns are numerically zero")
    Q = U[:, :rank]
    return SubspacePrior(basis=B, orthonormal_basis=Q, projector=Q @ Q.T)


def svd_prior(X, d: int) -> SubspacePrior:
    """Prior spanned by the top-d right singular vectors of the design."""
    Xa = _as_design_array(X)
    if not 1 <= d <= min(Xa.shape):
        raise DimensionMismatch(f"d={d} outside 1..{min(Xa.shape)}")
    _, s, Vt = np.linalg.svd(Xa, full_matrices=False)
    if s[d - 1] <= max(Xa.shape) * _EPS * s[0]:
        raise RankDeficient("X", int(np.count_nonzero(s > max(Xa.shape) * _EPS * s[0])), d)
    Q = Vt[:d].T
    return SubspacePrior(basis=Q, orthonormal_basis=Q, projector=Q @ Q.T, source="svd")


def derivative_penalty(p: int, order: int = 2, shift_a: float = 0.0) -> PenaltyOperator:
    """Difference penalty of the given order on a length-p coefficient.

    Order 0 is the identity (ridge).  Order 1 is the upper-bidiagonal
    first-difference matrix whose last row is e_p', which keeps the operator
    square and invertible.  Order 2 is the square of the order-1 operator.
    A positive ``shift_a`` adds ``a*I``, trading smoothness against shrinkage.
    """
    if order not in (0, 1, 2):
        raise InvalidOrder(f"order must be 0, 1 or 2, got {order}")
    if p < 2 or (order == 2 and p < 3):
        raise InvalidOrder(f"p={p} too small for order {order}")
    if shift_a < 0:
        raise ValueError("shift_a must be nonnegative")

    if order == 0:
        L = np.eye(p)
    else:
        D = np.eye(p) - np.diag(np.ones(p - 1), 1)
        D[-1, -1] = 1.0  # last row is e_p', already set by the identity part
        L = D if order == 1 else D @ D
    if shift_a > 0:
        L = L + shift_a * np.eye(p)

    kind = "identity" if (order == 0 and shift_a == 0.0) else "derivative"
    return PenaltyOperator(values=L, kind=kind)


def identity_penalty(p: int) -> PenaltyOperator:
    return derivative_penalty(p, order=0)


def projection_penalty(prior: SubspacePrior, a: float, b: float) -> PenaltyOperator:
    """The operator a*(I - P) + b*P for a subspace projector P.

    With b = 0 the operator annihilates the prior subspace, so coefficients
    inside it are never shrunk; the null-space dimension is then recorded as
    a hint for downstream factorizations.
    """
    if not isinstance(prior, SubspacePrior):
        raise TypeError("prior must be a SubspacePrior")
    if a <= 0:
        raise ValueError("a must be positive (use multispace_penalty for a=0)")
    if b < 0:
        raise ValueError("b must be nonnegative")
    P = prior.projector
    p = prior.p
    L = a * (np.eye(p) - P) + b * P
    hint = prior.d if b == 0 else 0
    return PenaltyOperator(values=L, kind="projection", nullspace_dim_hint=hint)


def multispace_penalty(projectors, weights) -> PenaltyOperator:
    """Weighted sum of mutually orthogonal projectors.

    The returned operator is L = sum_j alpha_j P_j, so the penalty value is
    ||L b||^2 = sum_j alpha_j^2 ||P_j b||^2.  The projectors must satisfy
    P_i P_j = 0 for i != j and sum_j P_j <= I; anything else raises
    NonOrthogonalDecomposition rather than silently double-counting.
    """
    Ps = [np.asarray(P, dtype=float) for P in projectors]
    w = np.asarray(weights, dtype=float)
    if len(Ps) == 0:
        raise EmptyPrior("no projectors supplied")
    if w.shape != (len(Ps),):
        raise DimensionMismatch(f"{len(Ps)} projectors but weight shape {w.shape}")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    p = Ps[0].shape[0]
    for P in Ps:
        if P.shape != (p, p):
            raise DimensionMismatch("projectors must share one square shape")
        if not np.allclose(P, P.T, atol=1e-12) or not np.allclose(P @ P, P, atol=1e-10):
            raise NonOrthogonalDecomposition("each block must be an orthogonal projector")
    for i in range(len(Ps)):
        for j in range(i + 1, len(Ps)):
            if np.max(np.abs(Ps[i] @ Ps[j])) > 1e-10:
                raise NonOrthogonalDecomposition(
                    f"projectors {i} and {j} overlap; blocks must be orthogonal"
                )
    total = np.sum(Ps, axis=0)
    if np.linalg.eigvalsh((total + total.T) / 2).max() > 1 + 1e-8:
        raise NonOrthogonalDecomposition("projectors exceed the identity in sum")

    L = np.zeros((p, p))
    for alpha_j, P in zip(w, Ps):
        L += alpha_j * P
    rank_pen = int(round(sum(np.trace(P) for alpha_j, P in zip(w, Ps) if alpha_j > 0)))
    return PenaltyOperator(values=L, kind="multispace", nullspace_dim_hint=p - rank_pen)


def goutis_penalty(p: int) -> PenaltyOperator:
    """Inverse-square-root of the second-difference Gram matrix.

    Satisfies L'L = (D2'D2)^{-1}, so the penalty weights rough directions
    *down* instead of up: the formulation that smooths the fitted function
    by integrating twice.  Computed through a symmetric eigendecomposition
    with nonpositive eigenvalues clamped out.
    """
    D2 = derivative_penalty(p, order=2).values
    A = D2.T @ D2
    lam, Q = np.linalg.eigh((A + A.T) / 2)
    tol = p * _EPS * lam[-1]
    inv_sqrt = np.where(lam > tol, 1.0 / np.sqrt(np.maximum(lam, tol)), 0.0)
    L = (Q * inv_sqrt) @ Q.T
    L = (L + L.T) / 2
    return PenaltyOperator(values=L, kind="goutis")


def stein_penalty(X) -> PenaltyOperator:
    """Row-space penalty D V' from the SVD of the design itself.

    Penalizing with this operator shrinks every estimable direction by the
    same factor 1/(1+alpha), which is the classical constant-shrinkage rule.
    Requires the design to have full row rank so that D is invertible.
    """
    Xa = _as_design_array(X)
    n, p = Xa.shape
    _, s, Vt = np.linalg.svd(Xa, full_matrices=False)
    rank = int(np.count_nonzero(s > max(n, p) * _EPS * s[0])) if s[0] > 0 else 0
    if rank < n:
        raise RankDeficient("X", rank, n)
    return PenaltyOperator(values=s[:, None] * Vt, kind="stein")
