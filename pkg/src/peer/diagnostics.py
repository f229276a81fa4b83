"""Closed-form accuracy diagnostics for penalized fits.

Bias, variance, and MSE of the penalized estimate have exact expressions
in the joint factors of (X, L): the resolution operator X^# X filters each
W-coordinate of beta by sigma_k^2/(sigma_k^2 + alpha mu_k^2), so what the
estimate loses (bias) and what noise adds (variance) can be read off
per component without any Monte-Carlo.  The module also carries the
four-term MSE split for the two-block penalty family and the
pseudoinverse perturbation bound for errors in the pair (X, L).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    PerturbationTooLarge,
    RankDeficient,
    WrongPrior,
)
from .estimators import _check_response, _thin_svd
from .gsvd import _as_design_array, _as_penalty_array, compute_gsvd
from .penalties import SubspacePrior

_EPS = np.finfo(float).eps

# Full p x p variance/resolution matrices are only materialized up to this
# dimension; beyond it callers get diagonals and traces.
_FULL_MATRIX_MAX_P = 2000


@dataclass
class FitDiagnostics:
    """Closed-form error budget of a penalized fit at one alpha.

    variance and resolution are p x p matrices for moderate p and None for
    large p (the diagonal and trace are always present).  mse_theoretical
    is ||bias||^2 + trace(variance); mse_bound replaces the bias norm by
    its triangle-inequality bound, so mse_theoretical <= mse_bound always.
    """

    bias: np.ndarray
    variance: np.ndarray | None
    variance_diag: np.ndarray
    variance_trace: float
    mse_theoretical: float
    mse_bound: float
    resolution: np.ndarray | None
    sigma_eps: float
    alpha: float


def _check_beta(factors, beta_true):
    b = np.asarray(beta_true, dtype=float).ravel()
    if b.size != factors.p:
        raise DimensionMismatch(f"beta_true has length {b.size}, expected {factors.p}")
    return b


def _bias_coefficients(factors, alpha):
    """Per-column shrinkage weights alpha mu^2/(sigma^2 + alpha mu^2), all p columns."""
    if alpha == 0:
        return np.zeros(factors.p)
    sf = factors.sigma_full
    mf = factors.mu_full
    return alpha * mf**2 / (sf**2 + alpha * mf**2)


def compute_bias(factors, alpha, beta_true):
    """Bias vector E[beta_hat] - beta_true in closed form.

    Each W-coordinate of beta is attenuated by alpha mu_k^2 / (sigma_k^2 +
    alpha mu_k^2), so the bias is minus the attenuated part; columns with
    mu_k = 0 (the null space of L) are never biased, and columns outside
    the design's reach (sigma_k = 0) are lost entirely.  Zero when
    alpha = 0 or L beta_true = 0.
    """
    beta = _check_beta(factors, beta_true)
    c = _bias_coefficients(factors, alpha)
    return -(factors.W @ (c * (factors.Winv @ beta)))


def compute_variance(factors, alpha, sigma_eps, full=None):
    """Covariance of the penalized estimate under white noise of SD sigma_eps.

    Returns the p x p matrix when ``full`` is true (default for
    p <= 2000), otherwise just the diagonal.
    """
    if sigma_eps < 0:
        raise ValueError("sigma_eps must be nonnegative")
    sig = factors.sigma
    mu = factors.mu
    F2 = sig**2 / (sig**2 + alpha * mu**2) ** 2
    Wn = factors.Wn
    if full is None:
        full = factors.p <= _FULL_MATRIX_MAX_P
    if full:
        return sigma_eps**2 * (Wn * F2) @ Wn.T
    return sigma_eps**2 * (Wn**2 @ F2)


def compute_mse(factors, alpha, beta_true, sigma_eps):
    """Exact MSE of the penalized estimate and its closed-form upper bound.

    mse = ||bias||^2 + sigma_eps^2 sum_k sigma_k^2/(sigma_k^2+alpha mu_k^2)^2
    ||w_k||^2.  The bound replaces ||bias|| by sum_k c_k |w~_k' beta|
    ||w_k|| (triangle inequality over the non-orthogonal w_k), which is the
    sharpest statement available without orthogonality.
    """
    beta = _check_beta(factors, beta_true)
    if sigma_eps < 0:
        raise ValueError("sigma_eps must be nonnegative")
    bias = compute_bias(factors, alpha, beta)

    sig = factors.sigma
    mu = factors.mu
    F2 = sig**2 / (sig**2 + alpha * mu**2) ** 2
    wn2 = np.sum(factors.Wn**2, axis=0)
    var_term = sigma_eps**2 * float(F2 @ wn2)

    c = _bias_coefficients(factors, alpha)
    w_norms = np.linalg.norm(factors.W, axis=0)
    bias_mag = float(np.sum(c * np.abs(factors.Winv @ beta) * w_norms))

    mse = float(bias @ bias) + var_term
    bound = bias_mag**2 + var_term
    return mse, bound


def diagnose(X, L, alpha, beta_true, sigma_eps, factors=None):
    """Full error budget for the pair (X, L) at one alpha; see FitDiagnostics."""
    if factors is None:
        factors = compute_gsvd(X, L)
    beta = _check_beta(factors, beta_true)
    bias = compute_bias(factors, alpha, beta)

    sig = factors.sigma
    mu = factors.mu
    F2 = sig**2 / (sig**2 + alpha * mu**2) ** 2
    Wn = factors.Wn
    var_diag = sigma_eps**2 * (Wn**2 @ F2)
    var_trace = float(var_diag.sum())
    small = factors.p <= _FULL_MATRIX_MAX_P
    variance = sigma_eps**2 * (Wn * F2) @ Wn.T if small else None

    sf = factors.sigma_full
    mf = factors.mu_full
    res_coef = np.where(sf**2 + alpha * mf**2 > 0, sf**2 / (sf**2 + alpha * mf**2), 0.0)
    resolution = (factors.W * res_coef) @ factors.Winv if small else None

    mse, bound = compute_mse(factors, alpha, beta, sigma_eps)
    return FitDiagnostics(
        bias=bias,
        variance=variance,
        variance_diag=var_diag,
        variance_trace=var_trace,
        mse_theoretical=mse,
        mse_bound=bound,
        resolution=resolution,
        sigma_eps=float(sigma_eps),
        alpha=float(alpha),
    )


@dataclass
class AbMseBreakdown:
    """Term-by-term MSE of the two-block estimate for L = a(I-P) + bP.

    Ordered as (off-prior variance, off-prior bias, prior variance, prior
    bias); remainder is the squared mass of beta outside the design's row
    space, which no estimate in the family can recover.  total is the sum
    of all five, so it matches the general closed-form MSE exactly.
    """

    variance_off_prior: float
    bias_off_prior: float
    variance_prior: float
    bias_prior: float
    remainder: float

    @property
    def total(self):
        return (
            self.variance_off_prior
            + self.bias_off_prior
            + self.variance_prior
            + self.bias_prior
            + self.remainder
        )


def _block_terms(s, vb, shrink, sigma_eps):
    """Variance and squared-bias sums for one block at shrinkage parameter c.

    shrink = a or b; np.inf means total shrinkage (variance 0, bias all of
    the block's signal).
    """
    if np.isinf(shrink):
        return 0.0, float(vb @ vb)
    s2 = s**2
    var = sigma_eps**2 * float(np.sum(s2 / (s2 + shrink**2) ** 2))
    bias = float(np.sum((shrink**2 / (s2 + shrink**2)) ** 2 * vb**2))
    return var, bias


def mse_ab_closed_form(X, prior, a, b, beta_true, sigma_eps):
    """Four-term MSE decomposition for the two-block penalty family.

    Requires a prior tagged as the design's dominant right singular
    subspace; the two blocks are then orthogonal and the MSE splits into
    independent variance/bias sums per block (plus the constant row-space
    remainder).  a or b may be np.inf for the fully-truncated limits.
    """
    Xa = _as_design_array(X)
    beta = np.asarray(beta_true, dtype=float).ravel()
    if beta.size != Xa.shape[1]:
        raise DimensionMismatch(
            f"beta_true has length {beta.size}, expected {Xa.shape[1]}"
        )
    if not isinstance(prior, SubspacePrior) or prior.source != "svd":
        raise WrongPrior("closed-form MSE split needs a singular-subspace prior")
    if a <= 0 or b < 0:
        raise ValueError("need a > 0 and b >= 0")
    if sigma_eps < 0:
        raise ValueError("sigma_eps must be nonnegative")

    _, s, Vt, rank, _ = _thin_svd(Xa)
    d = prior.d
    if d > rank:
        raise WrongPrior(f"prior dimension {d} exceeds design rank {rank}")
    Q = prior.orthonormal_basis
    resid = Q - Vt[:d].T @ (Vt[:d] @ Q)
    if np.abs(resid).max() > 1e-8:
        raise WrongPrior(
            "prior tagged 'svd' does not span this design's top singular subspace"
        )

    vb = Vt[:rank] @ beta
    var_q, bias_q = _block_terms(s[:d], vb[:d], b, sigma_eps)
    var_off, bias_off = _block_terms(s[d:rank], vb[d:rank], a, sigma_eps)
    remainder = max(float(beta @ beta) - float(vb @ vb), 0.0)
    return AbMseBreakdown(
        variance_off_prior=var_off,
        bias_off_prior=bias_off,
        variance_prior=var_q,
        bias_prior=bias_q,
        remainder=remainder,
    )


def pcr_stabilization_condition(X, d, b, beta_true, sigma_eps):
    """Sufficient condition for d-term PCR to lose to its b-stabilized variant.

    Returns (holds, lhs, rhs) where the condition is

        sigma_eps^2 ( sum_{prior block} 1/sigma_k^2 + 2 d / b^2 )  >  ||V_d' beta||^2.

    When it holds, shrinking the prior block by b > 0 strictly reduces MSE
    relative to leaving it untruncated-and-unshrunk.
    """
    Xa = _as_design_array(X)
    beta = np.asarray(beta_true, dtype=float).ravel()
    if b <= 0:
        raise ValueError("b must be positive")
    _, s, Vt, rank, _ = _thin_svd(Xa)
    if not 1 <= d <= rank:
        raise DimensionMismatch(f"d={d} outside 1..{rank}")
    lhs = sigma_eps**2 * (float(np.sum(1.0 / s[:d] ** 2)) + 2.0 * d / b**2)
    rhs = float(np.sum((Vt[:d] @ beta) ** 2))
    return lhs > rhs, lhs, rhs


def empirical_covariance(X):
    """Sample second-moment matrix X'X / n of the predictor curves."""
    Xa = _as_design_array(X)
    return Xa.T @ Xa / Xa.shape[0]


def perturbation_bound(X, L, alpha, y, E1, E2):
    """Stability bound for the estimate under perturbations of (X, L).

    The estimate is Z^+ [y; 0] with Z = [X; sqrt(alpha) L]; E1 and E2
    perturb the two blocks of Z directly (E2 acts on the scaled penalty
    block).  Returns (bound, observed_change) where observed_change is the
    actual shift after refitting with Z + E, and

        bound = t/(1-t) (||beta|| + ||Z^+|| ||r||),   t = ||Z^+|| ||E|| < 1.
    """
    Xa = _as_design_array(X)
    La = _as_penalty_array(L)
    y = _check_response(Xa, y)
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    n, p = Xa.shape
    if La.shape[1] != p:
        raise DimensionMismatch(
            f"design has p = {p} columns but penalty has {La.shape[1]}"
        )
    E1 = np.asarray(E1, dtype=float)
    E2 = np.asarray(E2, dtype=float)
    if E1.shape != Xa.shape or E2.shape != La.shape:
        raise DimensionMismatch("E1/E2 must match the shapes of X and L")

    Z = np.vstack([Xa, np.sqrt(alpha) * La])
    yz = np.concatenate([y, np.zeros(La.shape[0])])
    s_z = np.linalg.svd(Z, compute_uv=False)
    rank_tol = max(Z.shape) * _EPS * s_z[0]
    if int((s_z > rank_tol).sum()) < p:
        raise RankDeficient("stacked", int((s_z > rank_tol).sum()), p)

    beta = np.linalg.lstsq(Z, yz, rcond=None)[0]
    r = yz - Z @ beta
    zdag = 1.0 / s_z[p - 1]

    E = np.vstack([E1, E2])
    e_norm = np.linalg.svd(E, compute_uv=False)[0] if np.any(E) else 0.0
    t = zdag * e_norm
    if t >= 1:
        raise PerturbationTooLarge(f"||Z^+|| ||E|| = {t:.3g} >= 1")
    bound = t / (1.0 - t) * (np.linalg.norm(beta) + zdag * np.linalg.norm(r))

    beta_e = np.linalg.lstsq(Z + E, yz, rcond=None)[0]
    observed = float(np.linalg.norm(beta - beta_e))
    return float(bound), observed
