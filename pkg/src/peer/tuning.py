"""Tuning-parameter selection: restricted maximum likelihood and grid search.

The penalized fit is the posterior mode of a mixed model in which the
penalized coefficient directions are random effects with variance
sigma_b^2 and the noise has variance sigma_eps^2; the penalty strength is
their ratio.  reml_select_alpha estimates that ratio by maximizing the
restricted likelihood after transforming the penalty to ridge form.
grid_search handles the two-parameter projection penalties, where one
weight is fixed by an a*b = const rule and the other scanned over a grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DimensionMismatch, EmptyGrid, FlatLikelihood
from .estimators import _check_response, fit_ab_family, standard_form_transform
from .gsvd import _as_design_array, _as_penalty_array

_EPS = np.finfo(float).eps


@dataclass
class TuningResult:
    """Selected tuning parameters plus the criterion values that chose them.

    For REML, alpha_hat = sigma_eps_hat^2 / sigma_b_hat^2 by construction
    and criterion_trace holds (alpha, restricted log-likelihood) pairs on a
    coarse grid.  For grid search, a_hat/b_hat are the selected pair,
    alpha_hat their product (the ridge-equivalent strength when a = b),
    and the trace holds (a, criterion value) pairs.
    """

    alpha_hat: float
    sigma_eps_hat: float | None
    sigma_b_hat: float | None
    criterion_trace: list
    method: str
    a_hat: float | None = None
    b_hat: float | None = None


def reml_select_alpha(X, L, y):
    """Estimate the penalty strength by restricted maximum likelihood.

    The pair is transformed to ridge form; coefficient directions in
    null(L) are unpenalized fixed effects and are projected out of the
    likelihood.  The restricted log-likelihood is then a function of
    lambda = sigma_eps^2/sigma_b^2 alone (sigma_b^2 profiles out in closed
    form), and is maximized by a bracketed search on log10 lambda in
    [-12, 12].  An optimum pinned to either bracket end raises
    FlatLikelihood rather than returning a silently clipped value.
    """
    Xa = _as_design_array(X)
    La = _as_penalty_array(L)
    y = _check_response(Xa, y)
    n, p = Xa.shape
    if n < 3:
        raise DimensionMismatch(f"REML needs n >= 3, got n = {n}")

    tr = standard_form_transform(Xa, La)

    # Null(L) directions enter the model as fixed effects through X; REML
    # works in the orthogonal complement of their fitted span.  The null
    # basis comes straight from the SVD of L: the subtraction I - L^+L
    # leaves a rounding residue of size eps*cond(L) that X would amplify
    # into phantom fixed effects.
    s_l, Vt_l = np.linalg.svd(La, full_matrices=True)[1:]
    tol_l = max(La.shape) * _EPS * (s_l[0] if s_l.size else 0.0)
    rank_l = int((s_l > tol_l).sum())
    if rank_l < p:
        XN = Xa @ Vt_l[rank_l:].T
        U_f, s_f, _ = np.linalg.svd(XN, full_matrices=True)
        r_f = 0
        if s_f.size and s_f[0] > 0:
            r_f = int((s_f > max(XN.shape) * _EPS * s_f[0]).sum())
    else:
        U_f, r_f = None, 0
    if r_f == 0:
        ytil = y
        Xtil = tr.XX
    else:
        C = U_f[:, r_f:]
        ytil = C.T @ y
        Xtil = C.T @ tr.XX
    nt = ytil.size
    if nt < 2:
        raise FlatLikelihood("fixed effects absorb all degrees of freedom")

    U_t, s_t, _ = np.linalg.svd(Xtil, full_matrices=True)
    gam2 = np.zeros(nt)
    gam2[: s_t.size] = s_t**2
    c2 = (U_t.T @ ytil) ** 2
    if not np.any(c2 > 0):
        raise FlatLikelihood("response carries no signal")

    def neg2_restricted(t):
        lam = 10.0**t
        sigma_b2 = np.mean(c2 / (gam2 + lam))
        return nt * np.log(sigma_b2) + np.sum(np.log(gam2 + lam))

    res = minimize_scalar(
        neg2_restricted,
        bounds=(-12.0, 12.0),
        method="bounded",
        options={"xatol": 4e-7},
    )
    t_hat = float(res.x)
    if t_hat < -12 + 1e-2 or t_hat > 12 - 1e-2:
        raise FlatLikelihood(
            f"restricted likelihood maximized at the bracket edge (log10 alpha = {t_hat:.2f})"
        )

    lam = 10.0**t_hat
    sigma_b2 = float(np.mean(c2 / (gam2 + lam)))
    sigma_eps2 = lam * sigma_b2
    trace = [
        (10.0**t, -0.5 * neg2_restricted(t)) for t in np.linspace(-12, 12, 25)
    ]
    return TuningResult(
        alpha_hat=lam,
        sigma_eps_hat=float(np.sqrt(sigma_eps2)),
        sigma_b_hat=float(np.sqrt(sigma_b2)),
        criterion_trace=trace,
        method="reml",
    )


def grid_search(
    X,
    prior,
    y,
    a_grid,
    b_rule="product_const",
    const=1.0,
    criterion="mse_oracle",
    beta_true=None,
    val_fraction=0.3,
):
    """Select the (a, b) pair of a projection penalty over a grid.

    b follows a from the rule a*b = const, so the grid is one-dimensional.
    criterion "mse_oracle" scores ||beta_hat - beta_true||^2 (simulation
    use); "gcv_free_validation" scores squared prediction error on a
    held-out tail of the rows (the last ~val_fraction of them).  Ties are
    broken toward smaller a, and the scan order is ascending, so the
    result does not depend on the order the grid was given in.
    """
    Xa = _as_design_array(X)
    y = _check_response(Xa, y)
    a_vals = np.sort(np.asarray(list(a_grid), dtype=float))
    if a_vals.size == 0:
        raise EmptyGrid("a_grid is empty")
    if np.any(a_vals <= 0):
        raise ValueError("a_grid entries must be positive")
    if b_rule != "product_const":
        raise ValueError(f"unknown b_rule {b_rule!r}")
    if const < 0:
        raise ValueError("const must be nonnegative")

    n = Xa.shape[0]
    if criterion == "mse_oracle":
        if beta_true is None:
            raise ValueError("mse_oracle needs beta_true")
        bt = np.asarray(beta_true, dtype=float).ravel()
    elif criterion == "gcv_free_validation":
        n_val = max(1, int(round(val_fraction * n)))
        if n - n_val < 2:
            raise DimensionMismatch(f"n = {n} leaves no training rows for validation")
        X_tr, X_val = Xa[: n - n_val], Xa[n - n_val :]
        y_tr, y_val = y[: n - n_val], y[n - n_val :]
    else:
        raise ValueError(f"unknown criterion {criterion!r}")

    trace = []
    best_a = None
    best_val = np.inf
    for a_i in a_vals:
        b_i = const / a_i
        if criterion == "mse_oracle":
            fit = fit_ab_family(Xa, prior, a_i, b_i, y)
            val = float(np.sum((fit.beta - bt) ** 2))
        else:
            fit = fit_ab_family(X_tr, prior, a_i, b_i, y_tr)
            val = float(np.mean((y_val - X_val @ fit.beta) ** 2))
        trace.append((float(a_i), val))
        if val < best_val:
            best_val = val
            best_a = float(a_i)

    b_hat = const / best_a
    return TuningResult(
        alpha_hat=best_a * b_hat,
        sigma_eps_hat=None,
        sigma_b_hat=None,
        criterion_trace=trace,
        method="grid",
        a_hat=best_a,
        b_hat=b_hat,
    )
