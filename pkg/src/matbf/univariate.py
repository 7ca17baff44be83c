"""Scalar closed forms and the stepwise-prior Bayes factor.

Univariate notation: observation Y at time t, posterior built from T = t - 1 points
with prior precision factor phi, so k = phi + t - 1, m* the posterior mean and
sigma*^2 = sigma^2 / k.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import log_ndtr
from scipy.stats import norm

from .core import DomainError


@dataclass(frozen=True)
class StepPrior:
    """Piecewise constant prior density g_j on disjoint intervals (lower_j, upper_j).

    ``likelihoods`` optionally fixes p_j = p(Y | theta_j) at a representative point of
    each segment (mean-value form); when omitted the interval integrals are exact."""

    segments: tuple
    sigma: float
    Y: float
    likelihoods: Optional[tuple] = None
    norm_tol: float = 1e-6

    def __post_init__(self):
        segs = tuple((float(a), float(b), float(g)) for a, b, g in self.segments)
        if not segs:
            raise ValueError("at least one segment is required")
        for a, b, g in segs:
            if not a < b:
                raise ValueError(f"segment ({a}, {b}) has non-positive length")
            if not g > 0:
                raise ValueError("segment densities must be positive")
        order = sorted(segs)
        for (a0, b0, _), (a1, b1, _) in zip(order, order[1:]):
            if a1 < b0:
                raise ValueError("segments overlap")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        mass = sum(g * (b - a) for a, b, g in segs)
        if abs(mass - 1.0) > self.norm_tol:
            raise ValueError(f"prior mass sum g_j (upper_j - lower_j) = {mass:.8g} differs from 1 "
                             f"by more than {self.norm_tol:g}")
        if self.likelihoods is not None:
            lik = tuple(float(v) for v in self.likelihoods)
            if len(lik) != len(segs) or min(lik) <= 0:
                raise ValueError("one positive likelihood value is required per segment")
            # keep likelihoods aligned with the sorted segments
            perm = sorted(range(len(segs)), key=lambda i: segs[i])
            object.__setattr__(self, "likelihoods", tuple(lik[i] for i in perm))
        object.__setattr__(self, "segments", order)

    @cached_property
    def arrays(self):
        s = np.array(self.segments)
        return s[:, 0], s[:, 1], s[:, 2]


def _lse(x):
    m = np.max(x)
    return m + np.log(np.sum(np.exp(x - m)))


def _log_interval_mass(Y, sigma, lo, hi):
    """log of int_lo^hi N(Y; theta, sigma^2) dtheta computed stably."""
    # = Phi((hi - Y)/s) - Phi((lo - Y)/s); evaluate in the tail that avoids cancellation
    a = (lo - Y) / sigma
    b = (hi - Y) / sigma
    out = np.empty_like(a)
    right = a > 0
    # both in the upper tail: Phi(-a) - Phi(-b)
    la, lb = log_ndtr(-a[right]), log_ndtr(-b[right])
    out[right] = la + np.log1p(-np.exp(lb - la))
    la, lb = log_ndtr(b[~right]), log_ndtr(a[~right])
    out[~right] = la + np.log1p(-np.exp(lb - la))
    return out


def step_prior_bf(prior: StepPrior, alpha) -> float:
    """H(alpha) = sum g_j P_j / (C(alpha) sum g_j^alpha P_j), C(alpha) = (sum g_j^alpha len_j)^{-1}.

    P_j is the exact Gaussian mass int_{Theta_j} N(Y; theta, sigma^2) dtheta, or
    p_j len_j when the prior carries fixed likelihood values."""
    alpha = float(alpha)
    if not (0.0 < alpha <= 1.0):
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    lo, hi, g = prior.arrays
    if prior.likelihoods is None:
        lp = _log_interval_mass(prior.Y, prior.sigma, lo, hi)
    else:
        lp = np.log(np.asarray(prior.likelihoods)) + np.log(hi - lo)
    lg = np.log(g)
    lam = np.log(hi - lo)
    log_num = _lse(lg + lp)
    # alternative predictive: sum g^a p_j / sum g^a len_j
    log_den = _lse(alpha * lg + lp) - _lse(alpha * lg + lam)
    return float(np.exp(log_num - log_den))


def step_prior_bf_meanvalue(prior: StepPrior, alpha, points: Optional[Sequence[float]] = None) -> float:
    """Variant replacing each interval integral by len_j N(Y; theta_j, sigma^2) at a
    representative point theta_j (segment midpoints by default)."""
    alpha = float(alpha)
    if not (0.0 < alpha <= 1.0):
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    lo, hi, g = prior.arrays
    th = 0.5 * (lo + hi) if points is None else np.asarray(points, float)
    lp = norm.logpdf(prior.Y, loc=th, scale=prior.sigma) + np.log(hi - lo)
    lg = np.log(g)
    log_num = _lse(lg + lp)
    log_den = _lse(alpha * lg + lp) - _lse(alpha * lg + np.log(hi - lo))
    return float(np.exp(log_num - log_den))


def find_unit_crossing(bf: Callable[[float], float], lo: float, hi: float,
                       n_grid: int = 1000, tol: float = 1e-6) -> Optional[float]:
    """First alpha in [lo, hi] where H - 1 changes sign on an n_grid scan, refined by bisection."""
    grid = np.linspace(lo, hi, n_grid)
    vals = np.array([bf(a) - 1.0 for a in grid])
    eps = 1e-12
    sgn = np.where(np.abs(vals) <= eps, 0, np.sign(vals))
    idx = np.flatnonzero(sgn != 0)
    for i0, i1 in zip(idx, idx[1:]):
        if sgn[i0] != sgn[i1]:
            a, b = grid[i0], grid[i1]
            fa = vals[i0]
            while b - a > tol:
                c = 0.5 * (a + b)
                fc = bf(c) - 1.0
                if np.sign(fc) == np.sign(fa):
                    a, fa = c, fc
                else:
                    b = c
            return 0.5 * (a + b)
    return None


def _k(phi, t):
    if not phi > 0:
        raise DomainError("phi must be positive")
    if not t >= 1:
        raise DomainError("t must be at least 1")
    return phi + t - 1.0


def univ_kappa(phi, t, alpha):
    k = _k(phi, t)
    alpha = np.asarray(alpha, float)
    return np.sqrt((alpha * k + 1.0) / (alpha * (k + 1.0)))


def univ_A(sigma, phi, t, alpha):
    """A_t = 2 sigma^2 (phi+t)(alpha(phi+t-1)+1) / ((alpha-1)(phi+t-1)) (negative for alpha < 1)."""
    k = _k(phi, t)
    alpha = np.asarray(alpha, float)
    return 2.0 * sigma ** 2 * (k + 1.0) * (alpha * k + 1.0) / ((alpha - 1.0) * k)


def univ_bf_closed_form(Y, m_star, sigma, phi, t, alpha):
    """(H, kappa) with H = kappa exp{(Y - m*)^2 / A_t}."""
    a = np.asarray(alpha, float)
    if np.any(a <= 0) or np.any(a >= 1):
        raise DomainError("alpha must lie in (0, 1)")
    kap = univ_kappa(phi, t, a)
    H = kap * np.exp((Y - m_star) ** 2 / univ_A(sigma, phi, t, a))
    return H, kap


def univ_log_bf(Y, m_star, sigma, phi, t, alpha):
    a = np.asarray(alpha, float)
    return 0.5 * np.log((a * _k(phi, t) + 1.0) / (a * (_k(phi, t) + 1.0))) + (Y - m_star) ** 2 / univ_A(sigma, phi, t, a)


def univ_bf_derivative(Y, m_star, sigma, phi, t, alpha):
    """dH/dalpha = (H/2) [ k (Y-m*)^2 / (sigma^2 (alpha k + 1)^2) - 1/(alpha (alpha k + 1)) ]."""
    k = _k(phi, t)
    H, _ = univ_bf_closed_form(Y, m_star, sigma, phi, t, alpha)
    a = np.asarray(alpha, float)
    return 0.5 * H * (k * (Y - m_star) ** 2 / (sigma ** 2 * (a * k + 1.0) ** 2) - 1.0 / (a * (a * k + 1.0)))


def univ_stationary_alpha(Y, m_star, sigma, phi, t) -> Optional[float]:
    """Minimiser alpha_0 = sigma^2 / (k ((Y-m*)^2 - sigma^2)); None unless it lies in (0, 1)."""
    k = _k(phi, t)
    z = (Y - m_star) ** 2 / sigma ** 2
    if z <= 1.0:
        return None
    a0 = 1.0 / (k * (z - 1.0))
    return a0 if a0 < 1.0 else None


def univ_posterior(ys, m, sigma, phi):
    """(m*, sigma*^2) after absorbing ys under prior N(m, sigma^2/phi)."""
    ys = np.asarray(ys, float)
    T = ys.size
    k = phi + T
    ybar = ys.mean() if T else 0.0
    return phi * m / k + T * ybar / k, sigma ** 2 / k


def univ_acceptance_interval(m_star, sigma, phi, t, alpha, h0):
    """Endpoints m* -/+ sqrt(log(h0/kappa) A_t) of {Y : H(Y) >= h0}."""
    kap = float(univ_kappa(phi, t, alpha))
    if not 0 < h0 <= kap:
        raise DomainError(f"h0={h0} must lie in (0, kappa={kap:.6g}]")
    half = np.sqrt(np.log(h0 / kap) * float(univ_A(sigma, phi, t, alpha)))
    return m_star - half, m_star + half


def univ_norm_const(sigma_star_sq, alpha):
    """C(alpha) = (2 pi sigma*^2)^{(alpha-1)/2} alpha^{1/2}."""
    return (2.0 * np.pi * sigma_star_sq) ** ((alpha - 1.0) / 2.0) * np.sqrt(alpha)


def univ_ibf_bound(phi, t) -> float:
    """Closed form of int_0^1 kappa(alpha) d alpha."""
    if not phi > 0 or not t >= 1:
        raise DomainError("need phi > 0 and t >= 1")
    a, b = float(phi + t), float(phi + t - 1)
    sa, sb = np.sqrt(a), np.sqrt(b)
    # log((sa+sb)/(sa-sb)) with sa - sb = 1/(sa+sb) to avoid cancellation
    return 1.0 + 2.0 * np.log(sa + sb) / (2.0 * np.sqrt(a * b))
