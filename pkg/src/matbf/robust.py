"""Minimum, integrated and normalised integrated Bayes factors over alpha."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import optimize
from scipy.special import betainc, betaln

GL_NODES = 128


class IntegrabilityError(ValueError):
    """The weighted integral of the Bayes factor is not guaranteed to be finite."""


class DegenerateNormalizerError(ValueError):
    """int kappa pi - 1 vanishes, so the normalised IBF is undefined."""


@dataclass(frozen=True)
class TruncatedBeta:
    a: float
    b: float
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("beta shape parameters must be positive")
        if not (0.0 <= self.lower < self.upper <= 1.0):
            raise ValueError("truncation bounds must satisfy 0 <= lower < upper <= 1")
        if not self.mass > 0:
            raise ValueError("truncation interval carries no beta mass")

    @property
    def mass(self) -> float:
        return float(betainc(self.a, self.b, self.upper) - betainc(self.a, self.b, self.lower))

    def logpdf(self, x):
        x = np.asarray(x, float)
        with np.errstate(divide="ignore"):
            out = ((self.a - 1) * np.log(x) + (self.b - 1) * np.log1p(-x)
                   - betaln(self.a, self.b) - np.log(self.mass))
        return np.where((x > self.lower) & (x < self.upper), out, -np.inf)

    def pdf(self, x):
        return np.exp(self.logpdf(x))


def default_weights(p: int, n: int, means=(0.7, 0.3), lower: float = 0.0):
    """Beta weights with a = np/2 + 1e-4 and b placing the mode at each target value,
    b = (a - 1)/mu - a + 2 (e.g. p=11, n=3 gives a=16.5001, b=7.6429 and 37.1667)."""
    a = 0.5 * n * p + 1e-4
    return tuple(TruncatedBeta(a, (a - 1.0) / mu - a + 2.0, lower, 1.0) for mu in means)


@dataclass(frozen=True)
class GuardResult:
    ok: bool
    message: str

    def __bool__(self):
        return self.ok


def integrability_guard(regime: str, p: int, n: int, weight: TruncatedBeta,
                        m_d: Optional[float] = None) -> GuardResult:
    """Sufficient conditions for finiteness of int H pi: a > np/2 (known V), or
    a > 1 and lower >= (2n + p)/m_d (unknown V)."""
    if regime in ("knownV", "known_v", "known"):
        need = 0.5 * n * p
        if weight.a > need:
            return GuardResult(True, "ok")
        return GuardResult(False, f"known-V integrability needs a > np/2 = {need:g}, got a = {weight.a:g}")
    if regime in ("unknownV", "unknown_v", "unknown"):
        if m_d is None:
            raise ValueError("the unknown-V guard needs m_d")
        bound = (2 * n + p) / m_d
        problems = []
        if not weight.a > 1:
            problems.append(f"a > 1 (got a = {weight.a:g})")
        if weight.lower < bound:
            problems.append(f"lower >= (2n+p)/m_d = {bound:.6g} (got lower = {weight.lower:g})")
        if problems:
            return GuardResult(False, "unknown-V integrability needs " + " and ".join(problems))
        return GuardResult(True, "ok")
    raise ValueError(f"unknown regime {regime!r}")


# ---------------------------------------------------------------------------


def _as_log(fn, log_scale):
    if log_scale:
        return lambda a: np.asarray(fn(a), float)
    return lambda a: np.log(np.asarray(fn(a), float))


def _vector_call(fn, a):
    try:
        out = np.asarray(fn(a), float)
        if out.shape == a.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([float(fn(x)) for x in a])


def minimum_bf(bf: Callable, domain, log_scale: bool = False, n_grid: int = 256, xtol: float = 1e-10):
    """Global minimum of H over (lo, hi): log-spaced grid scan then golden section in
    the bracket around the best grid point.  Returns (alpha_min, mbf)."""
    lo, hi = map(float, domain)
    if not 0 < lo < hi:
        raise ValueError("domain must satisfy 0 < lo < hi")
    logf = _as_log(bf, log_scale)
    grid = np.geomspace(lo, hi, n_grid)
    vals = _vector_call(logf, grid)
    i = int(np.argmin(vals))
    if 0 < i < n_grid - 1 and vals[i] < vals[i - 1] and vals[i] < vals[i + 1]:
        f = lambda x: float(_vector_call(logf, np.array([x]))[0])
        res = optimize.minimize_scalar(f, bracket=(grid[i - 1], grid[i], grid[i + 1]), method="golden",
                                       options={"xtol": xtol})
        if res.fun <= vals[i] and lo <= res.x <= hi:
            return float(res.x), float(np.exp(res.fun))
    return float(grid[i]), float(np.exp(vals[i]))


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float


def _panels(lower, upper, n_geo=40):
    """Geometric panel edges refining towards the lower endpoint."""
    width = upper - lower
    inner = lower + width * 2.0 ** -np.arange(n_geo, 0, -1)
    return np.concatenate([[lower], inner, [upper]])


@lru_cache(maxsize=8)
def _nodes(n):
    x, w = leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def _gl_integrate(log_integrand, lower, upper, nodes=GL_NODES, n_geo=40, split=1):
    x, w = _nodes(nodes)
    edges = _panels(lower, upper, n_geo)
    if split > 1:
        edges = np.unique(np.concatenate([np.linspace(a, b, split + 1) for a, b in zip(edges[:-1], edges[1:])]))
    pts, wts = [], []
    # first panel: alpha = lower + u^2, d alpha = 2u du, never touching the endpoint
    a, b = edges[0], edges[1]
    ub = np.sqrt(b - a)
    u = 0.5 * ub * (x + 1.0)
    pts.append(a + u ** 2)
    wts.append(0.5 * ub * w * 2.0 * u)
    for a, b in zip(edges[1:-1], edges[2:]):
        pts.append(0.5 * (b - a) * x + 0.5 * (a + b))
        wts.append(0.5 * (b - a) * w)
    pts = np.concatenate(pts)
    wts = np.concatenate(wts)
    lv = log_integrand(pts)
    m = np.max(lv[np.isfinite(lv)]) if np.any(np.isfinite(lv)) else 0.0
    return float(np.exp(m) * np.sum(wts * np.exp(lv - m)))


def weighted_integral(bf: Callable, weight: TruncatedBeta, log_scale: bool = False) -> QuadResult:
    """int H(alpha) pi(alpha) d alpha with a panel-halving error estimate."""
    logf = _as_log(bf, log_scale)
    li = lambda a: _vector_call(logf, a) + weight.logpdf(a)
    v1 = _gl_integrate(li, weight.lower, weight.upper)
    v2 = _gl_integrate(li, weight.lower, weight.upper, split=2)
    return QuadResult(v2, abs(v2 - v1))


def integrated_bf(bf: Callable, weight: TruncatedBeta, log_scale: bool = False,
                  guard: Optional[GuardResult] = None) -> QuadResult:
    """IBF = int H pi d alpha - 1."""
    if guard is not None and not guard.ok:
        raise IntegrabilityError(guard.message)
    q = weighted_integral(bf, weight, log_scale)
    return QuadResult(q.value - 1.0, q.error)


def normalized_ibf(bf: Callable, kappa: Callable, weight: TruncatedBeta, log_scale: bool = False,
                   guard: Optional[GuardResult] = None, tol: float = 1e-12) -> float:
    """NIBF = (int H pi - 1) / (int kappa pi - 1)."""
    if guard is not None and not guard.ok:
        raise IntegrabilityError(guard.message)
    num = weighted_integral(bf, weight, log_scale).value - 1.0
    den = weighted_integral(kappa, weight, log_scale).value - 1.0
    if den <= tol:
        raise DegenerateNormalizerError(f"int kappa pi - 1 = {den:.3g} is not positive")
    return num / den


@dataclass(frozen=True)
class RobustBFs:
    alpha_min: float
    mbf: float
    ibf: float
    ibf_error: float
    nibf: float
