"""Conjugate posterior updates and the closed-form predictive distributions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core import (DomainError, KnownVModel, NIWModel, PosteriorKnownV, PosteriorNIW, SPDError,
                   as_stack, chol, chol_solve, validate_spd)
from .matdist import MatNormParams, MatTParams, matnorm_logpdf, matt_logpdf


class RunningMoments:
    """Streaming mean and Sigma_L^{-1}-weighted scatter of p x n matrices.

    ``scatter`` accumulates sum_i (Y_i - Ybar)' Sigma_L^{-1} (Y_i - Ybar) (n x n)."""

    def __init__(self, p: int, n: int, Sigma_L=None):
        self.count = 0
        self.mean = np.zeros((p, n))
        self.scatter = np.zeros((n, n))
        self._L = chol(Sigma_L, "Sigma_L") if Sigma_L is not None else None

    def _w(self, D):
        if self._L is None:
            return D
        return linalg.solve_triangular(self._L, D, lower=True)

    def push(self, Y):
        self.count += 1
        delta = Y - self.mean
        self.mean = self.mean + delta / self.count
        a = self._w(delta)
        b = self._w(Y - self.mean)
        self.scatter = self.scatter + a.T @ b
        return self

    def extend(self, Ys):
        for Y in Ys:
            self.push(Y)
        return self


def _vdot_sigma(L, D):
    """D' Sigma^{-1} D from the lower factor of Sigma."""
    W = linalg.solve_triangular(L, D, lower=True)
    return W.T @ W


def update_known_v(model: KnownVModel, data) -> PosteriorKnownV:
    """Posterior of B with Sigma_P = Sigma_L/phi: M* = (phi M + T Ybar)/(phi+T), Sigma* = Sigma_L/(phi+T)."""
    Y = as_stack(data, model.p, model.n)
    T = Y.shape[0]
    if T == 0:
        return PosteriorKnownV(model.M.copy(), model.Sigma_L / model.phi, 0)
    mom = RunningMoments(model.p, model.n).extend(Y)
    k = model.phi + T
    M_star = (model.phi * model.M + T * mom.mean) / k
    return PosteriorKnownV(M_star, model.Sigma_L / k, T)


def update_known_v_generic(model: KnownVModel, data, Sigma_P=None) -> PosteriorKnownV:
    """Dense reference update with an arbitrary prior row covariance Sigma_P.

    Builds the Tp x Tp system with J = iota_T (x) I_p; intended as a test oracle for small T."""
    Y = as_stack(data, model.p, model.n)
    T, p, n = Y.shape
    SP = model.Sigma_L / model.phi if Sigma_P is None else np.asarray(Sigma_P, float)
    if T == 0:
        return PosteriorKnownV(model.M.copy(), SP.copy(), 0)
    if T > 5:
        raise ValueError("the dense reference path is limited to T <= 5")
    J = np.kron(np.ones((T, 1)), np.eye(p))
    A = np.kron(np.eye(T), model.Sigma_L) + J @ SP @ J.T
    Ystack = Y.reshape(T * p, n)
    R = Ystack - np.kron(np.ones((T, 1)), model.M)
    G = linalg.solve(A, np.hstack([R, J @ SP]), assume_a="pos")
    M_star = model.M + SP @ J.T @ G[:, :n]
    S_star = SP - SP @ J.T @ G[:, n:]
    return PosteriorKnownV(M_star, 0.5 * (S_star + S_star.T), T)


def update_niw(model: NIWModel, data) -> PosteriorNIW:
    """Matrix normal inverse Wishart update.

    Psi* = Psi + kT/(k+T) (M - Ybar)' Sigma_L^{-1} (M - Ybar) + T S,
    T S = sum_i (Y_i - Ybar)' Sigma_L^{-1} (Y_i - Ybar)."""
    Y = as_stack(data, model.p, model.n)
    T = Y.shape[0]
    p, n = model.p, model.n
    m_star = model.m + T * p
    if not m_star > 2 * n:
        raise DomainError(f"posterior degrees of freedom m+Tp={m_star} must exceed 2n={2 * n}")
    k = model.k
    if T == 0:
        return PosteriorNIW(model.M.copy(), k, model.m, model.Psi.copy(), 0)
    mom = RunningMoments(p, n, model.Sigma_L).extend(Y)
    L = chol(model.Sigma_L, "Sigma_L")
    D = model.M - mom.mean
    Psi_star = model.Psi + (k * T / (k + T)) * _vdot_sigma(L, D) + mom.scatter
    Psi_star = 0.5 * (Psi_star + Psi_star.T)
    if not validate_spd(Psi_star):
        raise SPDError("updated Psi* is not positive definite (degenerate data)")
    M_star = (k * model.M + T * mom.mean) / (k + T)
    return PosteriorNIW(M_star, k + T, m_star, Psi_star, T)


def _check_alpha(alpha):
    alpha = float(alpha)
    if not (0.0 < alpha <= 1.0):
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    return alpha


@dataclass(frozen=True)
class PredictiveKnownV:
    M_star: np.ndarray
    Sigma_d: np.ndarray
    Sigma_Ad: np.ndarray
    V: np.ndarray
    alpha: float

    def logpdf_null(self, Y) -> float:
        return matnorm_logpdf(Y, MatNormParams(self.M_star, self.Sigma_d, self.V))

    def logpdf_alt(self, Y) -> float:
        return matnorm_logpdf(Y, MatNormParams(self.M_star, self.Sigma_Ad, self.V))


def predictive_known_v(post: PosteriorKnownV, model: KnownVModel, alpha) -> PredictiveKnownV:
    alpha = _check_alpha(alpha)
    Sd = model.Sigma_L + post.Sigma_star
    SAd = Sd if alpha == 1.0 else model.Sigma_L + post.Sigma_star / alpha
    return PredictiveKnownV(post.M_star, Sd, SAd, model.V, alpha)


def alpha_low_niw(post: PosteriorNIW, model: NIWModel) -> float:
    """Pole of the alternative multivariate gamma: (p + 2n)/m_d."""
    return (model.p + 2 * model.n) / (post.m_star + model.p)


@dataclass(frozen=True)
class PredictiveNIW:
    alpha: float
    M_star: np.ndarray
    Sigma_L: np.ndarray
    nu_null: float
    nu_alt: float
    L_star: np.ndarray
    L_A_star: np.ndarray
    k_star: float
    k_d: float
    k_A_star: float
    k_A_d: float
    m_star: float
    m_d: float
    m_A_star: float
    m_A_d: float

    def logpdf_null(self, Y) -> float:
        return matt_logpdf(Y, MatTParams(self.nu_null, self.M_star, self.Sigma_L, self.L_star))

    def logpdf_alt(self, Y) -> float:
        return matt_logpdf(Y, MatTParams(self.nu_alt, self.M_star, self.Sigma_L, self.L_A_star))


def predictive_niw(post: PosteriorNIW, model: NIWModel, alpha) -> PredictiveNIW:
    alpha = _check_alpha(alpha)
    p, n = model.p, model.n
    lo = alpha_low_niw(post, model)
    if alpha <= lo:
        raise DomainError(f"alpha={alpha} must exceed the lower bound (p+2n)/m_d = {lo:.6g}")
    k_star, m_star = post.k_star, post.m_star
    k_d = k_star + 1.0
    k_As = alpha * k_star
    k_Ad = k_As + 1.0
    m_d = m_star + p
    m_As = alpha * m_d - p
    m_Ad = m_As + p
    L_star = post.Psi_star * (k_d / k_star)
    L_As = alpha * post.Psi_star * (k_Ad / k_As)
    return PredictiveNIW(alpha, post.M_star, model.Sigma_L, m_star - 2 * n, m_As - 2 * n,
                         L_star, L_As, k_star, k_d, k_As, k_Ad, m_star, m_d, m_As, m_Ad)
