"""Matrix normal, inverse Wishart and matrix Student-t log densities and samplers.

The inverse Wishart uses the exponent convention
g(V | Psi, m) = |Psi|^{(m-n-1)/2} etr(-Psi V^{-1}/2) / (2^{(m-n-1)n/2} Gamma_n((m-n-1)/2) |V|^{m/2}),
valid for m > 2n.  In the more common "nu" convention this is IW(nu = m - n - 1, Psi).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln, digamma

from .core import (DomainError, ShapeError, as_matrix, chol, logdet_from_chol, make_rng,
                   require_spd)

LOG2PI = float(np.log(2.0 * np.pi))


def log_multigamma(n: int, a) -> float:
    """log Gamma_n(a) = n(n-1)/4 log(pi) + sum_j log Gamma(a + (1-j)/2)."""
    a = float(a)
    if n < 1:
        raise DomainError("dimension must be at least 1")
    if not a > 0.5 * (n - 1):
        raise DomainError(f"multivariate gamma Gamma_{n}(a) needs a > {(n - 1) / 2}, got a={a}")
    j = np.arange(1, n + 1)
    return 0.25 * n * (n - 1) * np.log(np.pi) + float(np.sum(gammaln(a + 0.5 * (1 - j))))


def multidigamma_sum(n: int, a) -> float:
    """d/da log Gamma_n(a) = sum_j digamma(a + (1-j)/2)."""
    a = float(a)
    if not a > 0.5 * (n - 1):
        raise DomainError(f"multivariate digamma needs a > {(n - 1) / 2}, got a={a}")
    j = np.arange(1, n + 1)
    return float(np.sum(digamma(a + 0.5 * (1 - j))))


@dataclass(frozen=True)
class MatNormParams:
    M: np.ndarray
    Sigma: np.ndarray
    Psi_col: np.ndarray

    def __post_init__(self):
        M = as_matrix(self.M, "M")
        S = require_spd(self.Sigma, "Sigma")
        P = require_spd(self.Psi_col, "Psi_col")
        if S.shape[0] != M.shape[0] or P.shape[0] != M.shape[1]:
            raise ShapeError("row covariance must be p x p and column covariance n x n")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "Psi_col", P)


@dataclass(frozen=True)
class InvWishartParams:
    Psi: np.ndarray
    m: float

    def __post_init__(self):
        P = require_spd(self.Psi, "Psi")
        if not self.m > 2 * P.shape[0]:
            raise DomainError(f"inverse Wishart needs m > 2n = {2 * P.shape[0]}, got m={self.m}")
        object.__setattr__(self, "Psi", P)


@dataclass(frozen=True)
class MatTParams:
    nu: float
    M: np.ndarray
    Sigma: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        if not self.nu > 0:
            raise DomainError(f"matrix-t degrees of freedom must be positive, got {self.nu}")
        M = as_matrix(self.M, "M")
        S = require_spd(self.Sigma, "Sigma")
        O = require_spd(self.Omega, "Omega")
        if S.shape[0] != M.shape[0] or O.shape[0] != M.shape[1]:
            raise ShapeError("Sigma must be p x p and Omega n x n")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "Omega", O)


def _whiten(D, La, Lb):
    """La^{-1} D Lb^{-T} via two triangular solves."""
    Z = linalg.solve_triangular(La, D, lower=True)
    return linalg.solve_triangular(Lb, Z.T, lower=True).T


def matnorm_logpdf(X, params: MatNormParams) -> float:
    X = as_matrix(X, "X")
    if X.shape != params.M.shape:
        raise ShapeError(f"X has shape {X.shape}, expected {params.M.shape}")
    p, n = X.shape
    La = chol(params.Sigma, "Sigma")
    Lb = chol(params.Psi_col, "Psi_col")
    W = _whiten(X - params.M, La, Lb)
    quad = float(np.sum(W * W))
    return (-0.5 * quad - 0.5 * n * p * LOG2PI
            - 0.5 * n * logdet_from_chol(La) - 0.5 * p * logdet_from_chol(Lb))


def matnorm_sample(params: MatNormParams, rng_seed, count: int = 1) -> np.ndarray:
    """Draw ``count`` matrices M + A Z B' with A, B the Cholesky factors."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed)
    A = chol(params.Sigma, "Sigma")
    B = chol(params.Psi_col, "Psi_col")
    p, n = params.M.shape
    Z = rng.standard_normal((count, p, n))
    return params.M + A @ Z @ B.T


def invwishart_logpdf(Vmat, params: InvWishartParams) -> float:
    Vmat = require_spd(Vmat, "V")
    n = Vmat.shape[0]
    if params.Psi.shape != Vmat.shape:
        raise ShapeError("V and Psi must have the same shape")
    m = params.m
    LV = chol(Vmat, "V")
    LP = chol(params.Psi, "Psi")
    # tr(Psi V^{-1}) = ||LV^{-1} LP||_F^2
    W = linalg.solve_triangular(LV, LP, lower=True)
    c = 0.5 * (m - n - 1)
    return (c * logdet_from_chol(LP) - 0.5 * float(np.sum(W * W))
            - c * n * np.log(2.0) - log_multigamma(n, c) - 0.5 * m * logdet_from_chol(LV))


def invwishart_sample(params: InvWishartParams, rng_seed, count: int = 1) -> np.ndarray:
    """Draws V = W^{-1}, W ~ Wishart(m - n - 1, Psi^{-1}), matching the density above."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed)
    n = params.Psi.shape[0]
    df = params.m - n - 1
    Lp = chol(params.Psi, "Psi")
    out = np.empty((count, n, n))
    for s in range(count):
        # Bartlett decomposition of a Wishart(df, I) draw
        A = np.tril(rng.standard_normal((n, n)), -1)
        A[np.diag_indices(n)] = np.sqrt(rng.chisquare(df - np.arange(n)))
        # W = Lp^{-T} A A' Lp^{-1}  =>  V = Lp A^{-T} A^{-1} Lp'
        G = linalg.solve_triangular(A, Lp.T, lower=True)
        out[s] = G.T @ G
    return out


def matt_logpdf(X, params: MatTParams) -> float:
    """Matrix variate t density (Gupta and Nagar, Definition 4.2.1):

    Gamma_p((nu+n+p-1)/2) / (pi^{np/2} Gamma_p((nu+p-1)/2)) |Sigma|^{-n/2} |Omega|^{-p/2}
      |I_p + Sigma^{-1}(X-M)Omega^{-1}(X-M)'|^{-(nu+n+p-1)/2}
    """
    X = as_matrix(X, "X")
    if X.shape != params.M.shape:
        raise ShapeError(f"X has shape {X.shape}, expected {params.M.shape}")
    p, n = X.shape
    nu = params.nu
    La = chol(params.Sigma, "Sigma")
    Lb = chol(params.Omega, "Omega")
    W = _whiten(X - params.M, La, Lb)
    # |I_p + W W'| computed on the smaller side
    G = W @ W.T if p <= n else W.T @ W
    Lg = chol(np.eye(G.shape[0]) + G, "I + W W'")
    e = 0.5 * (nu + n + p - 1)
    return (log_multigamma(p, e) - log_multigamma(p, 0.5 * (nu + p - 1))
            - 0.5 * n * p * np.log(np.pi)
            - 0.5 * n * logdet_from_chol(La) - 0.5 * p * logdet_from_chol(Lb)
            - e * logdet_from_chol(Lg))
