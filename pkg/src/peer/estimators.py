"""Penalized least-squares estimators and their series expansions.

The central object is the penalized fit

    beta = argmin ||y - X b||^2 + alpha ||L b||^2,

computable three ways: a direct symmetric solve, a series in the GSVD of
(X, L) whose rank-one terms support partial-sum reconstruction, and a
transformation to ridge form for penalties that are expensive to handle
directly.  The remaining constructors cover the classical special cases
(principal components, minimum norm, constant shrinkage, spectral filter
families) and the two-block family a*(I-P) + b*P that interpolates
between them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import (
    DimensionMismatch,
    RankDeficient,
    SingularSystem,
    TooManyComponents,
    WrongPath,
    WrongPrior,
)
from .gsvd import (
    PenaltyOperator,
    _as_design_array,
    _as_penalty_array,
    _elden_pieces,
    compute_gsvd,
    filter_expansion,
)
from .penalties import SubspacePrior, goutis_penalty, projection_penalty

_EPS = np.finfo(float).eps


@dataclass
class PenalizedFit:
    """A fitted coefficient vector plus the pieces needed to take it apart.

    filters holds the per-component filter factors f_k where the method has
    them; components (gsvd path only) is an (n, p) array whose rows are the
    rank-one terms f_k (1/sigma_k)(u_k'y) w_k, ascending sigma first and
    null-space terms last, so partial sums are cumulative row sums.  jitter
    records any stabilizing ridge added by the direct solver.
    """

    beta: np.ndarray
    alpha: object
    method: str
    filters: np.ndarray | None = None
    components: np.ndarray | None = None
    fitted: np.ndarray | None = None
    jitter: float = 0.0


def _check_response(Xa, y):
    y = np.asarray(y, dtype=float).ravel()
    if y.size != Xa.shape[0]:
        raise DimensionMismatch(f"y has length {y.size}, expected {Xa.shape[0]}")
    if not np.isfinite(y).all():
        raise ValueError("response contains non-finite entries")
    return y


def _thin_svd(Xa):
    U, s, Vt = np.linalg.svd(Xa, full_matrices=False)
    tol = max(Xa.shape) * _EPS * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum())
    return U, s, Vt, rank, tol


def fit_penalized(X, L, y, alpha, path="gsvd", factors=None, transform=None):
    """Solve the penalized problem for the pair (X, L) at one alpha.

    path="direct" solves the stacked least-squares form [X; sqrt(alpha) L]
    by QR, which keeps full accuracy where the normal matrix X'X + alpha L'L
    would square the condition number; rank-deficient stacked systems fall
    back to the jittered normal equations (jitter recorded on the fit).
    path="gsvd" evaluates the filter-factor series, populating components;
    pass precomputed ``factors`` to amortize the decomposition over an
    alpha grid.  path="standard_form" transforms to an equivalent ridge
    problem; pass ``transform`` to amortize likewise.  alpha may be zero
    where the unpenalized limit is well defined.
    """
    Xa = _as_design_array(X)
    La = _as_penalty_array(L)
    y = _check_response(Xa, y)
    n, p = Xa.shape
    if La.shape[1] != p:
        raise DimensionMismatch(
            f"design has p = {p} columns but penalty has {La.shape[1]}"
        )
    if not np.isscalar(alpha) or alpha < 0:
        raise ValueError(f"alpha must be a nonnegative scalar, got {alpha!r}")

    if path == "direct":
        kind = L.kind if isinstance(L, PenaltyOperator) else "custom"
        if kind == "stein" and p > n:
            # L'L = X'X here, so the normal matrix is (1+alpha) X'X and is
            # singular for p > n; the penalized problem still has a unique
            # row-space solution, the scaled minimum-norm fit.
            beta = np.linalg.lstsq(Xa, y, rcond=None)[0] / (1.0 + alpha)
            return PenalizedFit(beta=beta, alpha=alpha, method="direct", fitted=Xa @ beta)
        Z = np.vstack([Xa, np.sqrt(alpha) * La])
        yz = np.concatenate([y, np.zeros(La.shape[0])])
        Qz, Rz = np.linalg.qr(Z)
        diag = np.abs(np.diag(Rz))
        if diag.size == p and diag.min() > max(Z.shape) * _EPS * diag.max():
            beta = solve_triangular(Rz, Qz.T @ yz, lower=False, check_finite=False)
            beta += solve_triangular(
                Rz, Qz.T @ (yz - Z @ beta), lower=False, check_finite=False
            )
            return PenalizedFit(beta=beta, alpha=alpha, method="direct", fitted=Xa @ beta)

        A = Xa.T @ Xa + alpha * (La.T @ La)
        jitter = 0.0
        try:
            c = cho_factor(A, lower=False, check_finite=False)
        except np.linalg.LinAlgError:
            jitter = 1e-12 * np.trace(A)
            if jitter <= 0:
                raise SingularSystem("normal matrix is zero")
            A = A + jitter * np.eye(p)
            try:
                c = cho_factor(A, lower=False, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise SingularSystem(
                    f"normal matrix not positive definite even with jitter {jitter:g}"
                ) from exc
        rhs = Xa.T @ y
        beta = cho_solve(c, rhs, check_finite=False)
        beta += cho_solve(c, rhs - A @ beta, check_finite=False)
        return PenalizedFit(
            beta=beta, alpha=alpha, method="direct", fitted=Xa @ beta, jitter=jitter
        )

    if path == "gsvd":
        fac = factors if factors is not None else compute_gsvd(Xa, La)
        if fac.n != n or fac.p != p:
            raise DimensionMismatch("supplied factors do not match the design shape")
        nd = fac.n - fac.d
        sig = fac.sigma[:nd]
        mu = fac.mu[:nd]
        f = sig**2 / (sig**2 + alpha * mu**2)
        beta = filter_expansion(fac, y, f)
        uy = fac.U.T @ y
        coef = np.empty(fac.n)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef[:nd] = np.where(f > 0, f / sig, 0.0) * uy[:nd]
        coef[nd:] = uy[nd:]
        comps = (fac.Wn * coef).T
        return PenalizedFit(
            beta=beta,
            alpha=alpha,
            method="gsvd",
            filters=np.concatenate([f, np.ones(fac.d)]),
            components=comps,
            fitted=Xa @ beta,
        )

    if path == "standard_form":
        tr = transform if transform is not None else standard_form_transform(Xa, La)
        return _fit_from_transform(tr, y, alpha)

    raise WrongPath(f"unknown path {path!r}")


def partial_sums(fit, ks, order="ascending"):
    """Partial reconstructions sum_{k<=K} of a gsvd-path fit.

    order="ascending" follows the stored component order (ascending sigma,
    null-space terms last).  order="dominant" reverses it, so the first
    terms are the ones the penalty leaves closest to untouched; that is
    the order in which a targeted penalty recovers signal features.
    """
    if fit.components is None:
        raise WrongPath("partial sums need a fit from the gsvd path")
    comps = fit.components
    if order == "dominant":
        comps = comps[::-1]
    elif order != "ascending":
        raise ValueError(f"unknown order {order!r}")
    n = comps.shape[0]
    ks = [int(k) for k in ks]
    if any(k < 1 or k > n for k in ks):
        raise ValueError(f"cutoffs must lie in 1..{n}")
    csum = np.cumsum(comps, axis=0)
    return [csum[k - 1].copy() for k in ks]


def fit_pcr(X, y, d_components):
    """Principal-component regression on the d dominant singular triples."""
    Xa = _as_design_array(X)
    y = _check_response(Xa, y)
    d = int(d_components)
    if d < 1:
        raise ValueError("d_components must be a positive integer")
    U, s, Vt, rank, _ = _thin_svd(Xa)
    if d > rank:
        raise TooManyComponents(f"asked for {d} components, rank is {rank}")
    beta = Vt[:d].T @ ((U[:, :d].T @ y) / s[:d])
    return PenalizedFit(
        beta=beta, alpha=None, method="pcr", filters=np.ones(d), fitted=Xa @ beta
    )


def fit_min_norm(X, y):
    """Minimum-norm least-squares fit X^+ y."""
    Xa = _as_design_array(X)
    y = _check_response(Xa, y)
    beta = np.linalg.lstsq(Xa, y, rcond=None)[0]
    return PenalizedFit(beta=beta, alpha=None, method="min_norm", fitted=Xa @ beta)


def fit_ab_family(X, prior, a, b, y):
    """Two-block estimate for the penalty a*(I - P) + b*P.

    When the prior is the design's own top-d right singular subspace the
    estimate splits into independent blocks with filters
    sigma^2/(sigma^2 + b^2) on the prior and sigma^2/(sigma^2 + a^2) off it,
    which is evaluated directly on the ordinary SVD.  b = 0 leaves the
    prior block unshrunk (the principal-component block); a = b gives back
    ridge with alpha = a^2.  For any other prior the same objective is fit
    through the projection penalty.
    """
    Xa = _as_design_array(X)
    y = _check_response(Xa, y)
    if not isinstance(prior, SubspacePrior):
        raise TypeError("prior must be a SubspacePrior")
    if a <= 0:
        raise ValueError("a must be positive")
    if b < 0:
        raise ValueError("b must be nonnegative")
    n, p = Xa.shape
    if prior.p != p:
        raise DimensionMismatch(f"prior lives in dimension {prior.p}, design has p = {p}")
    d = prior.d

    if prior.source == "svd":
        U, s, Vt, rank, _ = _thin_svd(Xa)
        if d > rank:
            raise TooManyComponents(f"prior dimension {d} exceeds rank {rank}")
        Q = prior.orthonormal_basis
        resid = Q - Vt[:d].T @ (Vt[:d] @ Q)
        # The split-filter shortcut needs the prior to be this design's own
        # top singular subspace; an svd prior carried over from another
        # design (validation splits) drops to the general path below.
        if np.abs(resid).max() <= 1e-8:
            f = np.empty(rank)
            f[:d] = s[:d] ** 2 / (s[:d] ** 2 + b**2)
            f[d:] = s[d:rank] ** 2 / (s[d:rank] ** 2 + a**2)
            beta = Vt[:rank].T @ (f * (U[:, :rank].T @ y) / s[:rank])
            return PenalizedFit(
                beta=beta, alpha=(a, b), method="ab_family", filters=f, fitted=Xa @ beta
            )

    Lq = projection_penalty(prior, a=a, b=b)
    m_eff = p - d if b == 0 else p
    path = "gsvd" if (n <= m_eff and p <= m_eff + n) else "direct"
    fit = fit_penalized(Xa, Lq, y, alpha=1.0, path=path)
    return replace(fit, alpha=(a, b), method="ab_family")


def fit_filter_family(X, y, phi, h):
    """Spectral-filter estimate V Sigma_h U'y over the ordinary SVD.

    Sigma_h = diag{ (sigma_k / h^2) * phi(sigma_k^2 / h^2) }, so
    phi(t) = 1/(1+t) with h = sqrt(alpha) is ridge and the step function
    phi(t) = 1/t for t > 1 (0 otherwise) truncates to the components with
    sigma_k > h, i.e. principal-component regression.
    """
    Xa = _as_design_array(X)
    y = _check_response(Xa, y)
    if not np.isscalar(h) or h <= 0:
        raise ValueError("h must be a positive scalar")
    U, s, Vt, rank, _ = _thin_svd(Xa)
    t = (s[:rank] / h) ** 2
    vals = np.array([float(phi(tk)) for tk in t])
    if not np.isfinite(vals).all():
        raise ValueError("phi produced non-finite values on the spectrum")
    sig_h = (s[:rank] / h**2) * vals
    beta = Vt[:rank].T @ (sig_h * (U[:, :rank].T @ y))
    return PenalizedFit(
        beta=beta,
        alpha=h,
        method="filter_family",
        filters=sig_h * s[:rank],
        fitted=Xa @ beta,
    )


def fit_ideal_filter(X, y, beta_true, sigma_eps):
    """MSE-optimal SVD filter, computable only when beta is known.

    Filter factors sigma_k^2 / (sigma_k^2 + sigma_eps^2 (v_k'beta)^{-2});
    components carrying none of beta get filter 0, and sigma_eps = 0
    removes all shrinkage.  Simulation benchmark, not an estimator.
    """
    Xa = _as_design_array(X)
    y = _check_response(Xa, y)
    beta_true = np.asarray(beta_true, dtype=float).ravel()
    if beta_true.size != Xa.shape[1]:
        raise DimensionMismatch(
            f"beta_true has length {beta_true.size}, expected {Xa.shape[1]}"
        )
    if sigma_eps < 0:
        raise ValueError("sigma_eps must be nonnegative")
    U, s, Vt, rank, _ = _thin_svd(Xa)
    vb = Vt[:rank] @ beta_true
    if sigma_eps == 0:
        f = np.ones(rank)
    else:
        s2 = s[:rank] ** 2
        vb_safe = np.where(vb != 0, vb, 1.0)
        f = np.where(vb != 0, s2 / (s2 + sigma_eps**2 / vb_safe**2), 0.0)
    beta = Vt[:rank].T @ (f * (U[:, :rank].T @ y) / s[:rank])
    return PenalizedFit(
        beta=beta, alpha=sigma_eps, method="filter_family", filters=f, fitted=Xa @ beta
    )


def fit_goutis(X, y, alpha):
    """Penalized fit under the inverse-square-root second-difference penalty."""
    Xa = _as_design_array(X)
    fit = fit_penalized(Xa, goutis_penalty(Xa.shape[1]), y, alpha, path="direct")
    return replace(fit, method="goutis")


@dataclass
class StandardFormTransform:
    """Cached pieces for transforming a penalty to ridge form.

    XX is the transformed design X L_X^+ whose ridge fits back-transform
    through LXdag; offset_map sends y to the null-space component fitted
    by ordinary least squares, which the penalty cannot see.  U, s, Vt
    hold the SVD of XX so repeated alphas cost one shrinkage each.
    """

    X: np.ndarray
    L: np.ndarray
    XX: np.ndarray
    LXdag: np.ndarray
    offset_map: np.ndarray
    U: np.ndarray
    s: np.ndarray
    Vt: np.ndarray


def standard_form_transform(X, L):
    Xa = _as_design_array(X)
    La = _as_penalty_array(L)
    if La.shape[1] != Xa.shape[1]:
        raise DimensionMismatch(
            f"design has p = {Xa.shape[1]} columns but penalty has {La.shape[1]}"
        )
    p = Xa.shape[1]
    s_z = np.linalg.svd(np.vstack([Xa, La]), compute_uv=False)
    rank_tol = max(Xa.shape[0] + La.shape[0], p) * _EPS * s_z[0]
    rank_z = int((s_z > rank_tol).sum())
    if rank_z < p:
        raise RankDeficient("stacked", rank_z, p)
    LXdag, K, _ = _elden_pieces(Xa, La)
    XX = Xa @ LXdag
    U, s, Vt = np.linalg.svd(XX, full_matrices=False)
    return StandardFormTransform(
        X=Xa, L=La, XX=XX, LXdag=LXdag, offset_map=K, U=U, s=s, Vt=Vt
    )


def _fit_from_transform(tr, y, alpha):
    x0 = tr.offset_map @ y
    ybar = y - tr.X @ x0
    tol = max(tr.XX.shape) * _EPS * (tr.s[0] if tr.s.size else 0.0)
    live = tr.s > tol
    with np.errstate(divide="ignore", invalid="ignore"):
        shr = np.where(live, tr.s / (tr.s**2 + alpha), 0.0)
        filters = np.where(live, tr.s**2 / (tr.s**2 + alpha), 0.0)[live]
    bb = tr.Vt.T @ (shr * (tr.U.T @ ybar))
    beta = tr.LXdag @ bb + x0
    return PenalizedFit(
        beta=beta,
        alpha=alpha,
        method="standard_form",
        filters=filters,
        fitted=tr.X @ beta,
    )


def standard_form(X, L, y):
    """Transform (X, L, y) to an equivalent ridge problem.

    Returns (XX, ybar, offset): the transformed design, the response with
    the null-space component removed, and the null-space offset itself.
    A ridge fit bb on (XX, ybar) back-transforms as LXdag @ bb + offset,
    which fit_penalized(path="standard_form") does in one call.
    """
    tr = standard_form_transform(X, L)
    y = _check_response(tr.X, y)
    x0 = tr.offset_map @ y
    return tr.XX, y - tr.X @ x0, x0
