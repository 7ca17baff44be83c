"""Power-discounted predictive Bayes factor H_t(alpha), its bound kappa_t(alpha),
normalising constants, alpha-derivatives and the acceptance ellipsoid.

Everything is computed in log space.  Two families of entry points exist:

* direct functions (``bf_known_v``, ``kappa_known_v`` ...) that follow the closed
  forms with Cholesky factorisations, one alpha at a time;
* curve objects (``KnownVCurve``, ``UnknownVCurve``) that diagonalise once and then
  evaluate log H, log kappa and d log H / d alpha for whole alpha grids in O(p + n).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .conjugate import alpha_low_niw
from .core import (DomainError, KnownVModel, NIWModel, PosteriorKnownV, PosteriorNIW, ShapeError,
                   as_matrix, chol, chol_solve, logdet_from_chol)
from .matdist import log_multigamma, multidigamma_sum

KNOWN_V_ALPHA_MIN = 1e-6
UNKNOWN_V_ALPHA_PAD = 1e-6
LOG2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class BFEvaluation:
    t: int
    alpha: float
    log_H: float
    log_kappa: float

    # large p n gives log values beyond float range; inf is the right answer there
    @property
    def H(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_H))

    @property
    def kappa(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_kappa))


def _alpha(alpha, lo=0.0):
    alpha = float(alpha)
    if not (lo < alpha <= 1.0):
        raise DomainError(f"alpha must lie in ({lo:.6g}, 1], got {alpha}")
    return alpha


def _check_Y(Y, M):
    Y = as_matrix(Y, "Y")
    if Y.shape != M.shape:
        raise ShapeError(f"Y has shape {Y.shape}, expected {M.shape}")
    return Y


def _A_tilde(Y, post, model):
    """(Y - M*) V^{-1} (Y - M*)'."""
    D = Y - post.M_star
    LV = chol(model.V, "V")
    W = linalg.solve_triangular(LV, D.T, lower=True)
    return W.T @ W


# ---------------------------------------------------------------------------
# known V


def kappa_known_v(post: PosteriorKnownV, model: KnownVModel, alpha) -> float:
    """log kappa = (n/2)(log|Sigma_Ad| - log|Sigma_d|); returned on the linear scale."""
    return float(np.exp(log_kappa_known_v(post, model, alpha)))


def log_kappa_known_v(post, model, alpha) -> float:
    alpha = _alpha(alpha)
    if alpha == 1.0:
        return 0.0
    Ld = chol(model.Sigma_L + post.Sigma_star, "Sigma_d")
    LA = chol(model.Sigma_L + post.Sigma_star / alpha, "Sigma_Ad")
    return 0.5 * model.n * (logdet_from_chol(LA) - logdet_from_chol(Ld))


def bf_known_v(Y, post: PosteriorKnownV, model: KnownVModel, alpha, t: int = 0) -> BFEvaluation:
    """log H = (n/2)(log|Sigma_Ad| - log|Sigma_d|) - tr[(Sigma_d^{-1} - Sigma_Ad^{-1}) A~]/2."""
    alpha = _alpha(alpha)
    Y = _check_Y(Y, post.M_star)
    if alpha == 1.0:
        return BFEvaluation(t, 1.0, 0.0, 0.0)
    Ld = chol(model.Sigma_L + post.Sigma_star, "Sigma_d")
    LA = chol(model.Sigma_L + post.Sigma_star / alpha, "Sigma_Ad")
    log_k = 0.5 * model.n * (logdet_from_chol(LA) - logdet_from_chol(Ld))
    D = Y - post.M_star
    LV = chol(model.V, "V")
    # tr[S^{-1} D V^{-1} D'] = ||L_S^{-1} D L_V^{-T}||_F^2
    Wv = linalg.solve_triangular(LV, D.T, lower=True).T
    qd = np.sum(linalg.solve_triangular(Ld, Wv, lower=True) ** 2)
    qa = np.sum(linalg.solve_triangular(LA, Wv, lower=True) ** 2)
    log_h = log_k - 0.5 * (qd - qa)
    return BFEvaluation(t, alpha, float(log_h), float(log_k))


def norm_const_known_v(post: PosteriorKnownV, model: KnownVModel, alpha) -> float:
    """log C(alpha) for the powered matrix normal posterior."""
    alpha = _alpha(alpha)
    p, n = model.p, model.n
    ld_s = logdet_from_chol(chol(post.Sigma_star, "Sigma*"))
    ld_v = logdet_from_chol(chol(model.V, "V"))
    return (0.5 * n * p * np.log(alpha) + 0.5 * (alpha - 1) * n * p * LOG2PI
            + 0.5 * (alpha - 1) * n * ld_s + 0.5 * (alpha - 1) * p * ld_v)


def sigma_H(post: PosteriorKnownV, model: KnownVModel, alpha) -> np.ndarray:
    """Sigma_H = (alpha Sigma_L + Sigma*) Sigma*^{-1} (Sigma_L + Sigma*) / (1 - alpha),
    the inverse of Sigma_d^{-1} - Sigma_Ad^{-1}."""
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"Sigma_H needs alpha in (0, 1), got {alpha}")
    SL, Ss = model.Sigma_L, post.Sigma_star
    Ls = chol(Ss, "Sigma*")
    S = (alpha * SL + Ss) @ chol_solve(Ls, SL + Ss) / (1.0 - alpha)
    return 0.5 * (S + S.T)


def bf_derivative_known_v(Y, post: PosteriorKnownV, model: KnownVModel, alpha) -> float:
    """dH/dalpha = H [ -(n/2) tr(Sigma_Ad^{-1} Sigma*) + tr(Sigma_Ad^{-1} Sigma* Sigma_Ad^{-1} A~)/2 ] / alpha^2."""
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    Y = _check_Y(Y, post.M_star)
    ev = bf_known_v(Y, post, model, alpha)
    LA = chol(model.Sigma_L + post.Sigma_star / alpha, "Sigma_Ad")
    P = chol_solve(LA, post.Sigma_star)
    At = _A_tilde(Y, post, model)
    Q = chol_solve(LA, At)
    dlog = (-0.5 * model.n * np.trace(P) + 0.5 * np.sum(P * Q.T)) / alpha ** 2
    return float(ev.H * dlog)


class KnownVCurve:
    """H(alpha) for one observation under known V, diagonalised once.

    With Q'Sigma_L Q = I and Q'Sigma* Q = diag(lam), w = diag(Q' A~ Q):
        log H = (n/2) sum log((1 + lam/a)/(1 + lam)) - (1/2) sum w (1/(1+lam) - 1/(1+lam/a)).
    """

    def __init__(self, Y, post: PosteriorKnownV, model: KnownVModel):
        Y = _check_Y(Y, post.M_star)
        lam, Q = linalg.eigh(post.Sigma_star, model.Sigma_L)
        self.lam = np.clip(lam, 1e-300, None)
        At = _A_tilde(Y, post, model)
        self.w = np.einsum("ij,ik,kj->j", Q, At, Q)
        self.n = model.n
        self.p = model.p

    @classmethod
    def from_stats(cls, lam, w, n):
        obj = cls.__new__(cls)
        obj.lam = np.atleast_1d(np.asarray(lam, float))
        obj.w = np.atleast_1d(np.asarray(w, float))
        obj.n = n
        obj.p = obj.lam.size
        return obj

    def log_kappa(self, alpha):
        a = np.asarray(alpha, float)[..., None]
        lam = self.lam
        out = 0.5 * self.n * np.sum(np.log1p(lam / a) - np.log1p(lam), axis=-1)
        return out

    def log_h(self, alpha):
        a = np.asarray(alpha, float)[..., None]
        lam = self.lam
        quad = np.sum(self.w * (lam / a - lam) / ((1.0 + lam) * (1.0 + lam / a)), axis=-1)
        return self.log_kappa(alpha) - 0.5 * quad

    def dlog_h(self, alpha):
        a = np.asarray(alpha, float)[..., None]
        lam = self.lam
        return np.sum(-0.5 * self.n * lam / (a * (a + lam)) + 0.5 * self.w * lam / (a + lam) ** 2, axis=-1)

    def h(self, alpha):
        return np.exp(self.log_h(alpha))

    def kappa(self, alpha):
        return np.exp(self.log_kappa(alpha))


# ---------------------------------------------------------------------------
# unknown V


def _lmg(n, a):
    """Vectorised log Gamma_n(a) for arrays a > (n-1)/2."""
    a = np.asarray(a, float)
    j = np.arange(1, n + 1)
    return 0.25 * n * (n - 1) * np.log(np.pi) + np.sum(gammaln(a[..., None] + 0.5 * (1 - j)), axis=-1)


def _niw_scalars(post, model, alpha):
    p = model.p
    k_star, m_star = post.k_star, post.m_star
    k_d = k_star + 1.0
    k_As = alpha * k_star
    k_Ad = k_As + 1.0
    m_d = m_star + p
    m_As = alpha * m_d - p
    m_Ad = m_As + p
    return k_star, k_d, k_As, k_Ad, m_star, m_d, m_As, m_Ad


def _alpha_niw(post, model, alpha):
    alpha = float(alpha)
    lo = alpha_low_niw(post, model)
    if not (lo < alpha <= 1.0):
        raise DomainError(f"alpha={alpha} must lie in ((p+2n)/m_d, 1] = ({lo:.6g}, 1]")
    return alpha


def _E_matrix(Y, post, model):
    """(Y - M*)' Sigma_L^{-1} (Y - M*)  (n x n)."""
    D = Y - post.M_star
    L = chol(model.Sigma_L, "Sigma_L")
    W = linalg.solve_triangular(L, D, lower=True)
    return W.T @ W


def log_kappa_unknown_v(post: PosteriorNIW, model: NIWModel, alpha) -> float:
    """log kappa = (np/2) log(k_Ad/k_d) + log Gamma_n((m_d-n-1)/2) + log Gamma_n((m_A*-n-1)/2)
    - log Gamma_n((m*-n-1)/2) - log Gamma_n((m_Ad-n-1)/2)."""
    alpha = _alpha_niw(post, model, alpha)
    if alpha == 1.0:
        return 0.0
    p, n = model.p, model.n
    k_star, k_d, k_As, k_Ad, m_star, m_d, m_As, m_Ad = _niw_scalars(post, model, alpha)
    return (0.5 * n * p * np.log(k_Ad / k_d)
            + log_multigamma(n, 0.5 * (m_d - n - 1)) + log_multigamma(n, 0.5 * (m_As - n - 1))
            - log_multigamma(n, 0.5 * (m_star - n - 1)) - log_multigamma(n, 0.5 * (m_Ad - n - 1)))


def kappa_unknown_v(post: PosteriorNIW, model: NIWModel, alpha) -> float:
    return float(np.exp(log_kappa_unknown_v(post, model, alpha)))


def bf_unknown_v(Y, post: PosteriorNIW, model: NIWModel, alpha, t: int = 0) -> BFEvaluation:
    """H = G |Psi_Ad|^{(m_Ad-n-1)/2} / |Psi_d|^{(m_d-n-1)/2} with
    Psi_d = Psi* + k*/k_d E, Psi_Ad = alpha Psi* + k_A*/k_Ad E, E = (Y-M*)' Sigma_L^{-1} (Y-M*)."""
    alpha = _alpha_niw(post, model, alpha)
    Y = _check_Y(Y, post.M_star)
    if alpha == 1.0:
        return BFEvaluation(t, 1.0, 0.0, 0.0)
    p, n = model.p, model.n
    k_star, k_d, k_As, k_Ad, m_star, m_d, m_As, m_Ad = _niw_scalars(post, model, alpha)
    E = _E_matrix(Y, post, model)
    Psi = post.Psi_star
    ld_psi = logdet_from_chol(chol(Psi, "Psi*"))
    ld_psiA = n * np.log(alpha) + ld_psi
    ld_d = logdet_from_chol(chol(Psi + (k_star / k_d) * E, "Psi_d"))
    ld_Ad = logdet_from_chol(chol(alpha * Psi + (k_As / k_Ad) * E, "Psi_Ad"))
    log_G = (0.5 * (m_star - n - 1) * ld_psi
             + 0.5 * n * p * (np.log(k_star) + np.log(k_Ad) - np.log(k_d) - np.log(k_As))
             + log_multigamma(n, 0.5 * (m_d - n - 1)) + log_multigamma(n, 0.5 * (m_As - n - 1))
             - log_multigamma(n, 0.5 * (m_star - n - 1)) - log_multigamma(n, 0.5 * (m_Ad - n - 1))
             - 0.5 * (m_As - n - 1) * ld_psiA)
    log_h = log_G + 0.5 * (m_Ad - n - 1) * ld_Ad - 0.5 * (m_d - n - 1) * ld_d
    log_k = log_kappa_unknown_v(post, model, alpha)
    return BFEvaluation(t, alpha, float(log_h), float(log_k))


def norm_const_unknown_v(post: PosteriorNIW, model: NIWModel, alpha) -> float:
    """log C(alpha) for the powered matrix normal inverse Wishart posterior."""
    alpha = _alpha_niw(post, model, alpha)
    p, n = model.p, model.n
    k_star, k_d, k_As, k_Ad, m_star, m_d, m_As, m_Ad = _niw_scalars(post, model, alpha)
    ld_psi = logdet_from_chol(chol(post.Psi_star, "Psi*"))
    ld_sig = logdet_from_chol(chol(model.Sigma_L, "Sigma_L")) - p * np.log(k_star)
    ld_psiA = n * np.log(alpha) + ld_psi
    ld_sigA = ld_sig - p * np.log(alpha)
    a_null = 0.5 * (m_star - n - 1)
    a_alt = 0.5 * (m_As - n - 1)
    return (a_alt * ld_psiA + 0.5 * alpha * n * p * LOG2PI + 0.5 * alpha * n * ld_sig
            + alpha * a_null * n * np.log(2.0) + alpha * log_multigamma(n, a_null)
            - 0.5 * n * p * LOG2PI - 0.5 * n * ld_sigA - a_alt * n * np.log(2.0)
            - log_multigamma(n, a_alt) - alpha * a_null * ld_psi)


class UnknownVCurve:
    """H(alpha) for one observation under the NIW prior, diagonalised once.

    With mu the generalised eigenvalues of E relative to Psi*, |Psi_d| and |Psi_Ad|
    factor as |Psi*| prod(1 + c mu) and |Psi*| prod(alpha + c_A mu)."""

    def __init__(self, Y, post: PosteriorNIW, model: NIWModel):
        Y = _check_Y(Y, post.M_star)
        E = _E_matrix(Y, post, model)
        self.mu = np.clip(linalg.eigh(E, post.Psi_star, eigvals_only=True), 0.0, None)
        self.p, self.n = model.p, model.n
        self.k_star, self.m_star = post.k_star, post.m_star
        self.alpha_low = alpha_low_niw(post, model)

    def _scalars(self, a):
        k_star, m_star, p = self.k_star, self.m_star, self.p
        return k_star, k_star + 1.0, a * k_star, a * k_star + 1.0, m_star, m_star + p, a * (m_star + p) - p, a * (m_star + p)

    def _check(self, a):
        a = np.atleast_1d(np.asarray(a, float))
        if np.any(a <= self.alpha_low) or np.any(a > 1.0):
            raise DomainError(f"alpha must lie in ({self.alpha_low:.6g}, 1]")
        return a

    def log_kappa(self, alpha):
        a = self._check(alpha)
        n, p = self.n, self.p
        k_star, k_d, k_As, k_Ad, m_star, m_d, m_As, m_Ad = self._scalars(a)
        out = (0.5 * n * p * np.log(k_Ad / k_d)
               + _lmg(n, 0.5 * (m_d - n - 1)) + _lmg(n, 0.5 * (m_As - n - 1))
               - _lmg(n, 0.5 * (m_star - n - 1)) - _lmg(n, 0.5 * (m_Ad - n - 1)))
        return out if np.ndim(alpha) else float(out[0])

    def log_h(self, alpha):
        a = self._check(alpha)
        n = self.n
        lk = np.atleast_1d(self.log_kappa(a))
        k_star, k_d, k_As, k_Ad, m_star, m_d, m_As, m_Ad = self._scalars(a)
        c, cA = k_star / k_d, k_As / k_Ad
        out = (lk + 0.5 * (m_Ad - n - 1) * np.sum(np.log1p((cA / a)[:, None] * self.mu), axis=1)
               - 0.5 * (m_d - n - 1) * np.sum(np.log1p(c * self.mu)))
        return out if np.ndim(alpha) else float(out[0])

    def dlog_h(self, alpha):
        """Log-derivative assembled from the factors k_Ad^{np/2}, Gamma_n((m_A*-n-1)/2),
        |Psi_Ad|^{(m_Ad-n-1)/2} over k_A*^{np/2}, Gamma_n((m_Ad-n-1)/2), |Psi_A*|^{(m_A*-n-1)/2}."""
        a = self._check(alpha)
        n, p = self.n, self.p
        out = np.empty(a.shape)
        for i, ai in enumerate(a):
            k_star, k_d, k_As, k_Ad, m_star, m_d, m_As, m_Ad = self._scalars(ai)
            cA = k_As / k_Ad
            dcA = k_star / k_Ad ** 2
            r = ai + cA * self.mu
            da1 = 0.5 * n * p * k_star / k_Ad
            da2 = 0.5 * m_d * multidigamma_sum(n, 0.5 * (m_As - n - 1))
            da3 = 0.5 * m_d * np.sum(np.log(r)) + 0.5 * (m_Ad - n - 1) * np.sum((1.0 + dcA * self.mu) / r)
            db1 = 0.5 * n * p / ai
            db2 = 0.5 * m_d * multidigamma_sum(n, 0.5 * (m_Ad - n - 1))
            db3 = 0.5 * m_d * n * np.log(ai) + 0.5 * (m_As - n - 1) * n / ai
            out[i] = da1 + da2 + da3 - db1 - db2 - db3
        return out if np.ndim(alpha) else float(out[0])

    def h(self, alpha):
        return np.exp(self.log_h(alpha))

    def kappa(self, alpha):
        return np.exp(self.log_kappa(alpha))


def bf_derivative_unknown_v(Y, post: PosteriorNIW, model: NIWModel, alpha) -> float:
    alpha = float(alpha)
    lo = alpha_low_niw(post, model)
    if not (lo < alpha < 1.0):
        raise DomainError(f"alpha must lie in ({lo:.6g}, 1), got {alpha}")
    curve = UnknownVCurve(Y, post, model)
    return float(np.exp(curve.log_h(alpha)) * curve.dlog_h(alpha))


# ---------------------------------------------------------------------------
# acceptance region


@dataclass(frozen=True)
class Ellipsoid:
    """{vec(Y) : (y - c)' (V (x) Sigma_H)^{-1} (y - c) <= radius_sq}, vec stacking columns."""

    center: np.ndarray
    radius_sq: float
    axes: list
    shape: tuple
    _Lh: np.ndarray
    _Lv: np.ndarray

    def quad_form(self, Y) -> float:
        D = np.asarray(Y, float) - self.center.reshape(self.shape, order="F")
        W = linalg.solve_triangular(self._Lh, D, lower=True)
        W = linalg.solve_triangular(self._Lv, W.T, lower=True)
        return float(np.sum(W * W))

    def contains(self, Y, tol: float = 0.0) -> bool:
        return self.quad_form(Y) <= self.radius_sq + tol


def acceptance_ellipsoid(post: PosteriorKnownV, model: KnownVModel, alpha, h0) -> Ellipsoid:
    """Region where H(Y) >= h0, i.e. tr[Sigma_H^{-1} A~] <= 2 log(kappa/h0).

    Axes: xi = gamma_i tau_j for eigenpairs (gamma_i, zeta_i) of Sigma_H and
    (tau_j, delta_j) of V, full length 2 sqrt(radius_sq xi), direction delta_j (x) zeta_i."""
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if not h0 > 0:
        raise DomainError("h0 must be positive")
    log_k = log_kappa_known_v(post, model, alpha)
    r2 = 2.0 * (log_k - np.log(h0))
    if r2 < 0:
        raise DomainError(f"h0={h0} exceeds kappa={np.exp(log_k):.6g}: the acceptance region is empty")
    SH = sigma_H(post, model, alpha)
    gam, _ = linalg.eigh(SH)
    tau, _ = linalg.eigh(model.V)
    axes = []
    for i, g in enumerate(gam):
        for j, tj in enumerate(tau):
            xi = float(g * tj)
            axes.append((xi, 2.0 * np.sqrt(r2 * xi), (i, j)))
    axes.sort(key=lambda a: -a[0])
    return Ellipsoid(post.M_star.flatten(order="F"), float(r2), axes, post.M_star.shape,
                     chol(SH, "Sigma_H"), chol(model.V, "V"))
