"""Hot inner loops with a numba path and a pure-numpy fallback.

Set MATBF_NUMBA=0 to force the numpy implementations (numba is also skipped when
it is not importable or when NUMBA_DISABLE_JIT is set)."""
from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("MATBF_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "no", "off")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    USE_NUMBA = False

_RESCALE = 1e200
_LOG_RESCALE = float(np.log(_RESCALE))


# ---------------------------------------------------------------------------
# gamma-mixture weights for sum_j lam_j chi2_n(noncentral)


def _ruben_loop(r, u, n, log_c0, tol, max_terms):
    """c_k = exp(log_c0) f_k with f_0 = 1, f_k = (1/k) sum_{j=1}^k j d_j f_{k-j},
    d_k = (n/(2k)) sum r^k + sum u r^{k-1}, r = 1 - lam/lam_j, u = lam U_j/lam_j.

    f is stored scaled by exp(-shift) to stay finite when c_0 underflows."""
    m = r.shape[0]
    f = np.zeros(max_terms + 1)
    jd = np.zeros(max_terms + 1)
    c = np.zeros(max_terms + 1)
    rk = np.ones(m)          # r^{k-1}
    f[0] = 1.0
    shift = 0.0
    c[0] = np.exp(log_c0)
    total = c[0]
    K = 1
    converged = False
    for k in range(1, max_terms + 1):
        s1 = 0.0
        s2 = 0.0
        for j in range(m):
            s2 += u[j] * rk[j]
            rk[j] *= r[j]
            s1 += rk[j]
        jd[k] = k * (0.5 * n * s1 / k + s2)
        acc = 0.0
        for j in range(1, k + 1):
            acc += jd[j] * f[k - j]
        f[k] = acc / k
        if f[k] > _RESCALE:
            for i in range(k + 1):
                f[i] /= _RESCALE
            shift += _LOG_RESCALE
        c[k] = np.exp(log_c0 + shift) * f[k]
        total += c[k]
        K = k + 1
        if 1.0 - total < tol and c[k] < tol:
            converged = True
            break
    return c[:K], converged


def _ruben_numpy(r, u, n, log_c0, tol, max_terms):
    r = np.asarray(r, float)
    u = np.asarray(u, float)
    f = np.zeros(max_terms + 1)
    jd = np.zeros(max_terms + 1)
    c = np.zeros(max_terms + 1)
    f[0] = 1.0
    shift = 0.0
    c[0] = np.exp(log_c0)
    total = c[0]
    rk = np.ones_like(r)
    K = 1
    converged = False
    for k in range(1, max_terms + 1):
        s2 = np.dot(u, rk)
        rk = rk * r
        jd[k] = 0.5 * n * rk.sum() + k * s2
        f[k] = np.dot(jd[1:k + 1], f[k - 1::-1][:k]) / k
        if f[k] > _RESCALE:
            f[:k + 1] /= _RESCALE
            shift += _LOG_RESCALE
        c[k] = np.exp(log_c0 + shift) * f[k]
        total += c[k]
        K = k + 1
        if 1.0 - total < tol and c[k] < tol:
            converged = True
            break
    return c[:K], converged


# ---------------------------------------------------------------------------
# generalized ESD over many series at once


def _gesd_loop(X, r_max, crit):
    """For each row of X run r_max removal steps; return R statistics and removed indices."""
    S, N = X.shape
    R = np.zeros((S, r_max))
    idx = np.full((S, r_max), -1, dtype=np.int64)
    alive = np.ones(N, dtype=np.bool_)
    for s in range(S):
        for i in range(N):
            alive[i] = True
        for step in range(r_max):
            cnt = 0
            tot = 0.0
            for i in range(N):
                if alive[i]:
                    cnt += 1
                    tot += X[s, i]
            mean = tot / cnt
            ss = 0.0
            for i in range(N):
                if alive[i]:
                    d = X[s, i] - mean
                    ss += d * d
            sd = np.sqrt(ss / (cnt - 1))
            best = -1.0
            bi = -1
            for i in range(N):
                if alive[i]:
                    d = abs(X[s, i] - mean)
                    if d > best:
                        best = d
                        bi = i
            if sd > 0.0:
                R[s, step] = best / sd
            else:
                R[s, step] = np.nan
            idx[s, step] = bi
            alive[bi] = False
    return R, idx


def _gesd_numpy(X, r_max, crit):
    X = np.array(X, dtype=float, copy=True)
    S, N = X.shape
    R = np.zeros((S, r_max))
    idx = np.full((S, r_max), -1, dtype=np.int64)
    rows = np.arange(S)
    for step in range(r_max):
        mean = np.nanmean(X, axis=1)
        sd = np.nanstd(X, axis=1, ddof=1)
        dev = np.abs(X - mean[:, None])
        bi = np.nanargmax(dev, axis=1)
        best = dev[rows, bi]
        with np.errstate(divide="ignore", invalid="ignore"):
            R[:, step] = np.where(sd > 0, best / sd, np.nan)
        idx[:, step] = bi
        X[rows, bi] = np.nan
    return R, idx


if USE_NUMBA:
    ruben_kernel = numba.njit(cache=True)(_ruben_loop)
    gesd_kernel = numba.njit(cache=True)(_gesd_loop)
else:
    ruben_kernel = _ruben_numpy
    gesd_kernel = _gesd_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
