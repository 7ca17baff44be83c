"""Element-wise Grubbs and generalized ESD baselines (two-sided)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .core import MatrixSeries


class DegenerateVarianceError(ValueError):
    """Sample variance is zero at some stage of the test."""


def grubbs_critical(N: int, level: float) -> float:
    """((N-1)/sqrt(N)) sqrt(t^2/(N-2+t^2)), t the upper level/(2N) quantile of t_{N-2}."""
    t = stats.t.isf(level / (2.0 * N), N - 2)
    return (N - 1) / math.sqrt(N) * math.sqrt(t * t / (N - 2 + t * t))


def grubbs_test(x, alpha_level: float = 0.05):
    """(G, critical value, flagged index or None); G = max |x_i - xbar| / s."""
    x = np.asarray(x, float).ravel()
    N = x.size
    if N < 3:
        raise ValueError("Grubbs' test needs at least 3 points")
    if not 0 < alpha_level < 1:
        raise ValueError("alpha_level must lie in (0, 1)")
    s = x.std(ddof=1)
    if not s > 0:
        raise DegenerateVarianceError("zero sample variance")
    dev = np.abs(x - x.mean())
    i = int(np.argmax(dev))
    G = float(dev[i] / s)
    crit = grubbs_critical(N, alpha_level)
    return G, crit, (i if G > crit else None)


def gesd_critical(N: int, r: int, level: float) -> np.ndarray:
    """lambda_i = (N-i) t / sqrt((N-i-1+t^2)(N-i+1)), t the upper level/(2(N-i+1)) quantile of t_{N-i-1}."""
    i = np.arange(1, r + 1)
    p = level / (2.0 * (N - i + 1))
    t = stats.t.isf(p, N - i - 1)
    return (N - i) * t / np.sqrt((N - i - 1 + t * t) * (N - i + 1))


def default_max_outliers(N: int) -> int:
    return max(1, math.ceil(0.1 * N))


def _gesd_count(R, crit):
    """Largest i (1-based) with R_i > lambda_i, row-wise; 0 when none."""
    above = R > crit
    idx = np.where(above, np.arange(1, R.shape[-1] + 1), 0)
    return idx.max(axis=-1)


def gesd_batch(X, max_outliers: int, alpha_level: float):
    """Run GESD on every row of X (S x N); returns (counts, removal indices, R)."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, float)))
    S, N = X.shape
    if max_outliers == 0:
        return np.zeros(S, dtype=int), np.zeros((S, 0), dtype=np.int64), np.zeros((S, 0))
    if N < max_outliers + 2:
        raise ValueError(f"series length {N} must be at least max_outliers + 2 = {max_outliers + 2}")
    crit = gesd_critical(N, max_outliers, alpha_level)
    R, idx = _kernels.gesd_kernel(X, int(max_outliers), crit)
    return _gesd_count(np.nan_to_num(R, nan=-np.inf), crit), idx, R


def gesd_test(x, max_outliers: Optional[int] = None, alpha_level: float = 0.05) -> list:
    """Rosner's generalized ESD: indices of the flagged points (possibly empty)."""
    x = np.asarray(x, float).ravel()
    if max_outliers is None:
        max_outliers = default_max_outliers(x.size)
    if not 0 < alpha_level < 1:
        raise ValueError("alpha_level must lie in (0, 1)")
    cnt, idx, R = gesd_batch(x[None, :], max_outliers, alpha_level)
    if max_outliers and np.any(np.isnan(R)):
        raise DegenerateVarianceError("zero sample variance during the removal sequence")
    return sorted(int(i) for i in idx[0, :cnt[0]])


# ---------------------------------------------------------------------------


@dataclass
class ClassicalReport:
    """flags[test][level] is a (T, p, n) boolean array; counts are derived from flags."""

    times: np.ndarray
    levels: tuple
    bonferroni: bool
    flags: dict
    errors: list = field(default_factory=list)

    def per_time(self, test: str, level: float) -> np.ndarray:
        return self.flags[test][level].sum(axis=(1, 2))

    def rows_with_outlier(self, test: str, level: float) -> np.ndarray:
        return self.flags[test][level].any(axis=2).sum(axis=1)

    def cols_with_outlier(self, test: str, level: float) -> np.ndarray:
        return self.flags[test][level].any(axis=1).sum(axis=1)

    def tidy_rows(self):
        """(t, test, level, entries, rows, cols) for CSV output."""
        out = []
        for test in sorted(self.flags):
            for lv in self.levels:
                e = self.per_time(test, lv)
                r = self.rows_with_outlier(test, lv)
                c = self.cols_with_outlier(test, lv)
                for i, t in enumerate(self.times):
                    out.append((int(t), test, lv, int(e[i]), int(r[i]), int(c[i])))
        return out


def elementwise_scan(series: MatrixSeries, levels: Sequence[float] = (0.01, 0.05),
                     bonferroni: bool = False, tests: Sequence[str] = ("grubbs", "gesd"),
                     max_outliers: Optional[int] = None, window: Optional[int] = None) -> ClassicalReport:
    """Apply the tests to each (row, col) series over the full history (or trailing windows
    ending at each t when ``window`` is given); levels are divided by pn under Bonferroni."""
    Y = np.asarray(series.values, float)
    T, p, n = Y.shape
    if T < 3:
        raise ValueError("each entry series needs at least 3 points")
    X = Y.reshape(T, p * n).T.copy()          # (pn, T)
    levels = tuple(float(l) for l in levels)
    flags = {tst: {lv: np.zeros((T, p, n), bool) for lv in levels} for tst in tests}
    errors = []
    sd = X.std(axis=1, ddof=1)
    bad = ~(sd > 0)
    for j in np.flatnonzero(bad):
        errors.append(f"entry ({j // n}, {j % n}): zero sample variance")
    ok = np.flatnonzero(~bad)
    segs = [(0, T)] if window is None else [(max(0, t - window + 1), t + 1) for t in range(T)]
    for lo, hi in segs:
        N = hi - lo
        if N < 3:
            continue
        Xs = X[ok, lo:hi]
        good = Xs.std(axis=1, ddof=1) > 0
        rows = ok[good]
        Xs = Xs[good]
        for lv in levels:
            eff = lv / (p * n) if bonferroni else lv
            if "grubbs" in tests:
                dev = np.abs(Xs - Xs.mean(axis=1, keepdims=True))
                G = dev.max(axis=1) / Xs.std(axis=1, ddof=1)
                arg = dev.argmax(axis=1)
                hit = G > grubbs_critical(N, eff)
                _mark(flags["grubbs"][lv], rows[hit], lo + arg[hit], n, window, hi)
            if "gesd" in tests:
                r = default_max_outliers(N) if max_outliers is None else max_outliers
                r = min(r, N - 2)
                cnt, idx, _ = gesd_batch(Xs, r, eff)
                for s in np.flatnonzero(cnt):
                    _mark(flags["gesd"][lv], np.repeat(rows[s], cnt[s]), lo + idx[s, :cnt[s]], n, window, hi)
    return ClassicalReport(np.asarray(series.times), levels, bonferroni, flags, errors)


def _mark(arr, entries, times, n, window, hi):
    entries = np.asarray(entries, int)
    times = np.asarray(times, int)
    if window is not None:
        # a trailing window only reports on its newest point
        keep = times == hi - 1
        entries, times = entries[keep], times[keep]
    arr[times, entries // n, entries % n] = True
