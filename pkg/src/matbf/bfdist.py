"""Finite-sample distribution of the predictive Bayes factor and the size/power calibration.

Under known V, Y ~ MN(M~, Sigma~, V) gives r = -2 log(H/kappa) = tr[Sigma_H^{-1}(Y-M*)V^{-1}(Y-M*)'],
a sum over the p generalised eigenvalues lam_j of (Sigma~, Sigma_H) of lam_j chi2_n(2 U_j).
Its law is a gamma mixture sum_k c_k Gamma(np/2 + k, scale 2 lam), so

    F_H(h) = P(r >= x) = sum_k c_k Q(np/2 + k, x / (2 lam)),   x = -2 log(h / kappa).

U_j is half the chi-square noncentrality of row j.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize, stats
from scipy.special import gammaincc, gammaln, ndtr, xlogy

from . import _kernels
from .bayesfactor import log_kappa_known_v, sigma_H
from .core import DomainError, KnownVModel, PosteriorKnownV, make_rng
from .matdist import log_multigamma

MAX_TERMS = 10_000
SPREAD_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """The mixture-weight tail did not fall below tolerance within the term cap."""


class Hypothesis(str, enum.Enum):
    null = "null"
    alternative = "alternative"


# ---------------------------------------------------------------------------
# gamma mixture for weighted noncentral chi-squares


@dataclass(frozen=True)
class RubenSeries:
    lambda_scale: float
    coeffs: np.ndarray
    K: int
    tail_bound: float
    eigenvalues: np.ndarray
    U_diag: np.ndarray
    n: int

    @property
    def dof(self) -> float:
        return self.n * self.eigenvalues.size

    def sf(self, x):
        """P(r >= x)."""
        x = np.asarray(x, float)
        shape = 0.5 * self.dof + np.arange(self.K)
        z = np.maximum(x, 0.0)[..., None] / (2.0 * self.lambda_scale)
        return np.clip(np.sum(self.coeffs * gammaincc(shape, z), axis=-1), 0.0, 1.0)

    def cdf(self, x):
        return 1.0 - self.sf(x)

    def pdf(self, x):
        x = np.asarray(x, float)
        shape = 0.5 * self.dof + np.arange(self.K)
        s = 2.0 * self.lambda_scale
        xs = np.maximum(x, 1e-300)[..., None]
        logg = xlogy(shape - 1.0, xs) - xs / s - gammaln(shape) - shape * np.log(s)
        out = np.sum(self.coeffs * np.exp(logg), axis=-1)
        return np.where(x > 0, out, 0.0)


def ruben_coeffs(eigenvalues, U_diag=None, n: int = 1, lambda_scale: Optional[float] = None,
                 tol: float = 1e-12, max_terms: int = MAX_TERMS) -> RubenSeries:
    """Mixture weights c_k for sum_j eigenvalues_j chi2_n(2 U_j).

    c_0 = exp(-sum U_j) prod (lam_j/lam)^{-n/2},
    d_k = (n/(2k)) sum (1 - lam/lam_j)^k + sum (lam U_j/lam_j)(1 - lam/lam_j)^{k-1},
    f_k = (1/k) sum_{j=1}^k j d_j f_{k-j}.  Stops once 1 - sum c < tol."""
    lam_j = np.atleast_1d(np.asarray(eigenvalues, float))
    if lam_j.size == 0 or np.any(~(lam_j > 0)):
        raise DomainError("eigenvalues must be positive")
    U = np.zeros_like(lam_j) if U_diag is None else np.atleast_1d(np.asarray(U_diag, float))
    if U.shape != lam_j.shape or np.any(U < 0):
        raise DomainError("U_diag must be nonnegative with one entry per eigenvalue")
    lmin = float(lam_j.min())
    lam = lmin if lambda_scale is None else float(lambda_scale)
    if not (0 < lam <= lmin * (1 + 1e-12)):
        raise DomainError(f"lambda_scale must lie in (0, min eigenvalue = {lmin:.6g}]")
    lam = min(lam, lmin)
    r = 1.0 - lam / lam_j
    u = lam * U / lam_j
    log_c0 = -U.sum() - 0.5 * n * np.sum(np.log(lam_j / lam))
    c, ok = _kernels.ruben_kernel(r, u, float(n), float(log_c0), float(tol), int(max_terms))
    c = np.maximum(np.asarray(c), 0.0)
    tail = max(0.0, 1.0 - float(c.sum()))
    if not ok:
        raise ConvergenceError(f"mixture tail {tail:.3g} still above {tol:g} after {max_terms} terms")
    return RubenSeries(lam, c, c.size, tail, lam_j, U, int(n))


# ---------------------------------------------------------------------------
# distribution of H


@dataclass(frozen=True)
class BFDistribution:
    """Law of H = kappa exp(-r/2) with r a weighted noncentral chi-square."""

    log_kappa: float
    eigenvalues: np.ndarray
    U_diag: np.ndarray
    n: int
    series: Optional[RubenSeries] = None

    @property
    def dof(self) -> int:
        return self.n * self.eigenvalues.size

    @property
    def collapsed(self) -> bool:
        lam = self.eigenvalues
        return bool((lam.max() - lam.min()) <= SPREAD_TOL * lam.max() and not np.any(self.U_diag > 0))

    def _x(self, h):
        h = np.asarray(h, float)
        if np.any(~(h > 0)):
            raise DomainError("h must be positive")
        x = -2.0 * (np.log(h) - self.log_kappa)
        if np.any(x < -1e-9 * max(1.0, abs(self.log_kappa))):
            raise DomainError(f"h exceeds kappa = {np.exp(self.log_kappa):.6g}")
        return np.maximum(x, 0.0)

    def sf_r(self, x):
        x = np.asarray(x, float)
        if self.collapsed:
            return stats.chi2.sf(x / self.eigenvalues[0], self.dof)
        return self.series.sf(x)

    def cdf_r(self, x):
        x = np.asarray(x, float)
        if self.collapsed:
            return stats.chi2.cdf(x / self.eigenvalues[0], self.dof)
        return self.series.cdf(x)

    def pdf_r(self, x):
        x = np.asarray(x, float)
        if self.collapsed:
            l0 = self.eigenvalues[0]
            return stats.chi2.pdf(x / l0, self.dof) / l0
        return self.series.pdf(x)

    def cdf(self, h):
        """P(H <= h) = P(r >= -2 log(h/kappa))."""
        return self.sf_r(self._x(h))

    def pdf(self, h):
        h = np.asarray(h, float)
        return 2.0 / h * self.pdf_r(self._x(h))

    def x_quantile(self, q: float) -> float:
        """x with P(r >= x) = q."""
        if not 0 < q < 1:
            raise DomainError("probability must lie in (0, 1)")
        if self.collapsed:
            return float(self.eigenvalues[0] * stats.chi2.isf(q, self.dof))
        hi = float(self.eigenvalues.max() * stats.chi2.isf(q, self.dof) + 2 * np.sum(self.U_diag * self.eigenvalues)) + 1.0
        while self.sf_r(hi) > q:
            hi *= 2.0
        return float(optimize.brentq(lambda x: float(self.sf_r(x)) - q, 0.0, hi, xtol=1e-14, rtol=4e-16))

    def log_quantile(self, q: float) -> float:
        """log h with P(H <= h) = q."""
        return self.log_kappa - 0.5 * self.x_quantile(q)


def _make_dist(log_kappa, lam, U, n, tol=1e-12) -> BFDistribution:
    lam = np.asarray(lam, float)
    U = np.asarray(U, float)
    dist = BFDistribution(float(log_kappa), lam, U, int(n))
    if dist.collapsed:
        return dist
    return BFDistribution(float(log_kappa), lam, U, int(n), ruben_coeffs(lam, U, n, tol=tol))


def bf_distribution(post: PosteriorKnownV, model: KnownVModel, alpha, hypothesis="null",
                    M_tilde=None, Sigma_tilde=None) -> BFDistribution:
    """Law of H(alpha) when Y ~ MN(M~, Sigma~, V).

    hypothesis='null' uses Sigma~ = Sigma_d and 'alternative' uses Sigma~ = Sigma_Ad, both
    centred at M*; explicit M_tilde / Sigma_tilde override either choice."""
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    hyp = Hypothesis(hypothesis)
    SL, Ss = model.Sigma_L, post.Sigma_star
    if Sigma_tilde is None:
        Sigma_tilde = SL + Ss if hyp is Hypothesis.null else SL + Ss / alpha
    SH = sigma_H(post, model, alpha)
    lam, Q = linalg.eigh(np.asarray(Sigma_tilde, float), SH)
    lam = np.clip(lam, 1e-300, None)
    if M_tilde is None:
        U = np.zeros_like(lam)
    else:
        mu = Q.T @ (np.asarray(M_tilde, float) - post.M_star)
        LV = linalg.cholesky(model.V, lower=True)
        W = linalg.solve_triangular(LV, mu.T, lower=True)
        U = 0.5 * np.sum(W * W, axis=0) / lam
    return _make_dist(log_kappa_known_v(post, model, alpha), lam, U, model.n)


def bf_cdf(h, post, model, alpha, hypothesis="null"):
    return bf_distribution(post, model, alpha, hypothesis).cdf(h)


def bf_pdf(h, post, model, alpha, hypothesis="null"):
    return bf_distribution(post, model, alpha, hypothesis).pdf(h)


# production posterior Sigma* = Sigma_L / k: both laws are scaled central chi-squares


def production_log_kappa(p, n, k, alpha) -> float:
    return 0.5 * n * p * (np.log1p(1.0 / (alpha * k)) - np.log1p(1.0 / k))


def production_scales(k, alpha):
    """(lam_0, lam_1) with r ~ lam chi2_{np} under the null and the alternative."""
    lam0 = (1.0 - alpha) / (alpha * k + 1.0)
    lam1 = (1.0 + 1.0 / (alpha * k)) * (1.0 - alpha) / ((alpha + 1.0 / k) * (1.0 + 1.0 / k) * k)
    return lam0, lam1


def production_distribution(p: int, n: int, k: float, alpha, hypothesis="null") -> BFDistribution:
    lam0, lam1 = production_scales(k, float(alpha))
    lam = lam0 if Hypothesis(hypothesis) is Hypothesis.null else lam1
    return BFDistribution(production_log_kappa(p, n, k, alpha), np.full(p, lam), np.zeros(p), n)


def univ_bf_cdf(h, theta, m_star, sigma, phi, t, alpha):
    """P(H <= h) for a scalar Y ~ N(theta, sigma^2):
    1 - Phi(s - sqrt(gamma)) + Phi(-s - sqrt(gamma)), s^2 = -2 log(h/kappa) sigma_H^2/sigma^2."""
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    k = phi + t - 1.0
    log_kap = 0.5 * np.log((alpha * k + 1.0) / (alpha * (k + 1.0)))
    h = np.asarray(h, float)
    if np.any(~(h > 0)) or np.any(np.log(h) > log_kap + 1e-12):
        raise DomainError("h must lie in (0, kappa]")
    ratio = (alpha * k + 1.0) * (k + 1.0) / (k * (1.0 - alpha))   # sigma_H^2 / sigma^2
    s = np.sqrt(np.maximum(-2.0 * (np.log(h) - log_kap), 0.0) * ratio)
    g = abs(theta - m_star) / sigma
    return 1.0 - ndtr(s - g) + ndtr(-s - g)


# ---------------------------------------------------------------------------
# calibration


JEFFREYS = ((1.0, "negative"), (10 ** 0.5, "barely_worth_mentioning"), (10.0, "substantial"),
            (10 ** 1.5, "strong"), (100.0, "very_strong"))


def jeffreys_label(H: float, log_H: Optional[float] = None) -> str:
    """Jeffreys grade of the evidence against the null carried by 1/H."""
    lh = float(np.log(H)) if log_H is None else float(log_H)
    for cut, label in JEFFREYS:
        if -lh < np.log(cut):
            return label
    return "decisive"


class Decision(str, enum.Enum):
    reject_null = "reject_null"
    accept_null = "accept_null"
    inconclusive = "inconclusive"


@dataclass(frozen=True)
class CalibrationResult:
    alpha_star: float
    h_lower: float
    h_upper: float
    tau: float
    beta: float
    achieved_power: float
    attained: bool = True
    size_at_h_lower: float = float("nan")
    method: str = "exact"
    scan: dict = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self, with_scan: bool = False) -> dict:
        d = asdict(self)
        if not with_scan:
            d.pop("scan")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationResult":
        keys = cls.__dataclass_fields__.keys()
        return cls(**{k: v for k, v in d.items() if k in keys})


def decide(H: float, cal: CalibrationResult):
    """(decision, Jeffreys label of 1/H)."""
    if not H > 0:
        raise DomainError("H must be positive")
    return decide_log(float(np.log(H)), cal)


def decide_log(log_H: float, cal: CalibrationResult):
    """decide() on log H, for Bayes factors that underflow."""
    if np.isnan(log_H):
        raise DomainError("log H is nan")
    if log_H < np.log(cal.h_lower):
        dec = Decision.reject_null
    elif log_H > np.log(cal.h_upper):
        dec = Decision.accept_null
    else:
        dec = Decision.inconclusive
    return dec, jeffreys_label(None, log_H)


def _check_levels(tau, beta):
    if not 0 < tau < 1:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    if not 0 < beta < 1:
        raise DomainError(f"beta must lie in (0, 1), got {beta}")


class _Calibrator:
    """alpha -> (log h_lower, power) for a family of (null, alternative) laws."""

    def __init__(self, laws, tau):
        self.laws = laws
        self.tau = tau

    def evaluate(self, alpha):
        d0, d1 = self.laws(alpha)
        x_lo = d0.x_quantile(self.tau)
        log_hl = d0.log_kappa - 0.5 * x_lo
        hl = np.exp(log_hl)
        if not 0 < hl < 1:
            return log_hl, np.nan
        log_hu = np.log(2.0 - hl)
        if log_hu >= d1.log_kappa:
            return log_hl, 0.0
        # power = 1 - F_1(h_upper) = P_1(r <= x_upper)
        return log_hl, float(d1.cdf_r(-2.0 * (log_hu - d1.log_kappa)))


def _run_calibration(cal: _Calibrator, tau, beta, alpha_grid, n_scan, method, size_fn):
    lo, hi = map(float, alpha_grid)
    if not 0 < lo < hi < 1:
        raise DomainError("alpha_grid must satisfy 0 < lo < hi < 1")
    grid = np.linspace(lo, hi, n_scan)
    vals = [cal.evaluate(a) for a in grid]
    log_hl = np.array([v[0] for v in vals])
    power = np.array([v[1] for v in vals])
    scan = {"alpha": grid.tolist(), "h_lower": np.exp(log_hl).tolist(), "power": power.tolist()}
    gap = power - beta
    a_star = None
    for i in range(n_scan - 1):
        if np.isfinite(gap[i]) and np.isfinite(gap[i + 1]) and gap[i] * gap[i + 1] <= 0:
            if gap[i] == 0:
                a_star = grid[i]
            else:
                a_star = optimize.brentq(lambda a: cal.evaluate(a)[1] - beta, grid[i], grid[i + 1], xtol=1e-12)
            break
    attained = a_star is not None
    if not attained:
        if not np.any(np.isfinite(power)):
            raise DomainError("no alpha in the grid gives 0 < h_lower < 1")
        a_star = float(grid[int(np.nanargmax(power))])
    lh, pw = cal.evaluate(a_star)
    hl = float(np.exp(lh))
    return CalibrationResult(float(a_star), hl, 2.0 - hl, float(tau), float(beta), float(pw),
                             bool(attained), float(size_fn(a_star, hl)), method, scan)


def calibrate_production(p: int, n: int, k: float, tau: float, beta: float,
                         alpha_grid=(0.01, 0.99), n_scan: int = 64) -> CalibrationResult:
    """Calibration for Sigma* = Sigma_L / k; depends on (p, n, k) only."""
    _check_levels(tau, beta)
    laws = lambda a: (production_distribution(p, n, k, a, "null"), production_distribution(p, n, k, a, "alternative"))
    size = lambda a, hl: float(production_distribution(p, n, k, a, "null").cdf(hl))
    return _run_calibration(_Calibrator(laws, tau), tau, beta, alpha_grid, n_scan, "exact", size)


def _is_production(post: PosteriorKnownV, model: KnownVModel):
    lam = linalg.eigh(post.Sigma_star, model.Sigma_L, eigvals_only=True)
    if lam.max() - lam.min() <= SPREAD_TOL * lam.max():
        return float(1.0 / lam.mean())
    return None


def calibrate(post: PosteriorKnownV, model: KnownVModel, tau: float, beta: float,
              alpha_grid=(0.01, 0.99), n_scan: int = 64) -> CalibrationResult:
    """Three-step procedure: h_lower(alpha) from F_0(h_lower) = tau, alpha* from
    1 - F_1(2 - h_lower(alpha*)) = beta located by a grid pre-scan plus bisection, and the
    inconclusive interval (h_lower, 2 - h_lower).  When no grid point reaches beta the
    power-maximising alpha is returned with attained=False."""
    _check_levels(tau, beta)
    k = _is_production(post, model)
    if k is not None:
        return calibrate_production(model.p, model.n, k, tau, beta, alpha_grid, n_scan)
    laws = lambda a: (bf_distribution(post, model, a, "null"), bf_distribution(post, model, a, "alternative"))
    size = lambda a, hl: float(bf_distribution(post, model, a, "null").cdf(hl))
    return _run_calibration(_Calibrator(laws, tau), tau, beta, alpha_grid, n_scan, "ruben", size)


# ---------------------------------------------------------------------------
# unknown V: Monte-Carlo laws (extension; no closed form is available)


def unknown_v_log_h(mu, p, n, k_star, m_star, alpha):
    """log H for rows of generalised eigenvalues mu (draws x n) of E relative to Psi*."""
    a = float(alpha)
    mu = np.atleast_2d(mu)
    k_d, k_As = k_star + 1.0, a * k_star
    k_Ad = k_As + 1.0
    m_d = m_star + p
    m_As = a * m_d - p
    m_Ad = m_As + p
    log_k = (0.5 * n * p * np.log(k_Ad / k_d)
             + log_multigamma(n, 0.5 * (m_d - n - 1)) + log_multigamma(n, 0.5 * (m_As - n - 1))
             - log_multigamma(n, 0.5 * (m_star - n - 1)) - log_multigamma(n, 0.5 * (m_Ad - n - 1)))
    c, cA = k_star / k_d, k_As / k_Ad
    return (log_k + 0.5 * (m_Ad - n - 1) * np.sum(np.log1p(cA * mu / a), axis=1)
            - 0.5 * (m_d - n - 1) * np.sum(np.log1p(c * mu), axis=1)), log_k


def _predictive_mu(p, n, k_star, m_star, alpha, draws, rng):
    """Eigenvalues of E = (Y-M*)' Sigma_L^{-1} (Y-M*) relative to Psi* for Y drawn from the
    null (alpha = 1) or alternative predictive; with Sigma_L = Psi* = I by scale invariance."""
    a = float(alpha)
    k_s = a * k_star
    m_s = a * (m_star + p) - p if a < 1 else m_star
    c = (k_s + 1.0) / k_s
    # V ~ IW(a I, m_s) in the (Psi, m) convention, i.e. standard df m_s - n - 1
    V = stats.invwishart.rvs(df=m_s - n - 1, scale=a * np.eye(n), size=draws, random_state=rng)
    V = np.asarray(V).reshape(draws, n, n)
    LV = np.linalg.cholesky(V)
    Z = rng.standard_normal((draws, p, n))
    D = np.sqrt(c) * Z @ np.swapaxes(LV, 1, 2)
    E = np.swapaxes(D, 1, 2) @ D
    return np.clip(np.linalg.eigvalsh(E), 0.0, None)


class _MCCalibrator(_Calibrator):
    def __init__(self, p, n, k_star, m_star, tau, draws, seed):
        self.p, self.n, self.k, self.m = p, n, k_star, m_star
        self.tau = tau
        self.draws = draws
        self.seed = seed
        self.mu0 = _predictive_mu(p, n, k_star, m_star, 1.0, draws, make_rng(seed))

    def evaluate(self, alpha):
        lh0, log_k = unknown_v_log_h(self.mu0, self.p, self.n, self.k, self.m, alpha)
        log_hl = float(np.quantile(lh0, self.tau))
        hl = np.exp(log_hl)
        if not 0 < hl < 1:
            return log_hl, np.nan
        rng = make_rng([self.seed, 1, int(round(alpha * 1e9))])
        mu1 = _predictive_mu(self.p, self.n, self.k, self.m, alpha, self.draws, rng)
        lh1, _ = unknown_v_log_h(mu1, self.p, self.n, self.k, self.m, alpha)
        return log_hl, float(np.mean(lh1 > np.log(2.0 - hl)))


def calibrate_unknown_v(p: int, n: int, k_star: float, m_star: float, tau: float, beta: float,
                        alpha_grid=None, n_scan: int = 64, draws: int = 10_000, seed=0) -> CalibrationResult:
    """Monte-Carlo version of the three-step procedure under the NIW prior.  The law of
    H depends only on (p, n, k*, m*), so thresholds are computed with Sigma_L = Psi* = I."""
    _check_levels(tau, beta)
    lo_bound = (p + 2 * n) / (m_star + p)
    if alpha_grid is None:
        alpha_grid = (min(0.99, lo_bound + 0.01), 0.99)
    if alpha_grid[0] <= lo_bound:
        raise DomainError(f"alpha_grid must start above (p+2n)/m_d = {lo_bound:.6g}")
    cal = _MCCalibrator(p, n, k_star, m_star, tau, draws, seed)

    def size(a, hl):
        lh0, _ = unknown_v_log_h(cal.mu0, p, n, k_star, m_star, a)
        return float(np.mean(lh0 <= np.log(hl)))
    return _run_calibration(cal, tau, beta, alpha_grid, n_scan, "monte_carlo", size)
