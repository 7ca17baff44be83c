"""Sequential rolling-window outlier detector.

For every t past the first window the previous w observations give a conjugate posterior
(prior scale phi = w, prior mean carried from the previous window's posterior mean),
Sigma_L is re-estimated by least squares, thresholds come from the calibration, and the
new observation is scored by H_t(alpha*), the robust Bayes factors and classical tests.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from . import bfdist, robust
from .bayesfactor import KNOWN_V_ALPHA_MIN, UNKNOWN_V_ALPHA_PAD, BFEvaluation, KnownVCurve, UnknownVCurve
from .classical import elementwise_scan
from .conjugate import alpha_low_niw, update_known_v, update_niw
from .core import DomainError, KnownVModel, MatrixSeries, NIWModel, SPDError, chol, validate_spd

REGIMES = ("known_v", "unknown_v")
RIDGE = 1e-8


@dataclass(frozen=True)
class DetectorConfig:
    window: int = 50
    regime: str = "known_v"
    tau: float = 0.01
    beta: float = 0.8
    alpha_fixed: tuple = ()
    weight_means: tuple = (0.7, 0.3)
    sigma_estimator: str = "least_squares"
    Sigma_L: Optional[np.ndarray] = field(default=None, compare=False)
    V: Optional[np.ndarray] = field(default=None, compare=False)
    freeze_sigma: bool = False
    alpha_grid: tuple = (0.01, 0.99)
    n_scan: int = 64
    alpha_star: Optional[float] = None      # skip the power step and use this alpha
    robust: bool = True
    classical_levels: tuple = (0.01, 0.05)
    bonferroni: bool = False
    classical_window: Optional[int] = None
    niw_extra_df: float = 2.0
    mc_draws: int = 10_000
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if int(self.window) < 2:
            raise ValueError("window must be at least 2")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        for name in ("tau", "beta"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.sigma_estimator not in ("least_squares", "user_supplied"):
            raise ValueError("sigma_estimator must be least_squares or user_supplied")
        if self.sigma_estimator == "user_supplied" and self.Sigma_L is None:
            raise ValueError("user_supplied sigma_estimator needs Sigma_L")
        for a in self.alpha_fixed:
            if not 0 < a <= 1:
                raise ValueError("alpha_fixed values must lie in (0, 1]")
        if self.alpha_star is not None and not 0 < self.alpha_star < 1:
            raise ValueError("alpha_star must lie in (0, 1)")

    def snapshot(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("Sigma_L", "V")}
        d["Sigma_L"] = None if self.Sigma_L is None else np.asarray(self.Sigma_L).tolist()
        d["V"] = None if self.V is None else np.asarray(self.V).tolist()
        return d


# ---------------------------------------------------------------------------
# covariance estimation


def estimate_sigma_l(window: np.ndarray, V=None) -> np.ndarray:
    """Row covariance of residuals Y_s - Ybar weighted by V^{-1} and averaged over the
    window and the n columns, plus a ridge of 1e-8 tr/p I."""
    W, p, n = window.shape
    R = window - window.mean(axis=0)
    if V is not None:
        LV = chol(V, "V")
        R = np.stack([linalg.solve_triangular(LV, r.T, lower=True).T for r in R])
    S = np.einsum("sij,skj->ik", R, R) / (max(W - 1, 1) * n)
    tr = np.trace(S)
    if not tr > 0 or not np.isfinite(tr):
        raise SPDError("estimated Sigma_L is degenerate (constant window?)")
    S = 0.5 * (S + S.T) + RIDGE * tr / p * np.eye(p)
    if not validate_spd(S):
        raise SPDError("estimated Sigma_L is not positive definite after shrinkage")
    return S


def estimate_v(window: np.ndarray, Sigma_L) -> np.ndarray:
    """Column covariance of residuals standardised by Sigma_L (unknown-V prior centre)."""
    W, p, n = window.shape
    R = window - window.mean(axis=0)
    L = chol(Sigma_L, "Sigma_L")
    Z = np.stack([linalg.solve_triangular(L, r, lower=True) for r in R])
    S = np.einsum("sji,sjk->ik", Z, Z) / (max(W - 1, 1) * p)
    tr = np.trace(S)
    S = 0.5 * (S + S.T) + RIDGE * tr / n * np.eye(n)
    if not validate_spd(S):
        raise SPDError("estimated V is not positive definite after shrinkage")
    return S


# ---------------------------------------------------------------------------


@dataclass
class TimeRecord:
    t: int
    alpha_star: float
    H: float
    kappa: float
    log_H: float
    log_kappa: float
    h_lower: float
    h_upper: float
    decision: str
    jeffreys: str
    alpha_min: Optional[float] = None
    mbf: Optional[float] = None
    ibf: list = field(default_factory=list)
    ibf_error: list = field(default_factory=list)
    nibf: list = field(default_factory=list)
    curve: dict = field(default_factory=dict)
    classical: dict = field(default_factory=dict)
    calibration_attained: bool = True


@dataclass
class DecisionReport:
    records: list
    config: dict
    calibration: dict
    shape: tuple
    classical_errors: list = field(default_factory=list)

    def decisions(self) -> list:
        return [r.decision for r in self.records]

    def to_dict(self) -> dict:
        return {"shape": list(self.shape), "config": self.config, "calibration": self.calibration,
                "classical_errors": self.classical_errors, "records": [asdict(r) for r in self.records]}

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True, allow_nan=False)

    def tidy_rows(self):
        """(t, metric, value) rows for plotting."""
        out = []
        for r in self.records:
            base = [("H", r.H), ("kappa", r.kappa), ("log_H", r.log_H), ("log_kappa", r.log_kappa),
                    ("alpha_star", r.alpha_star), ("h_lower", r.h_lower), ("h_upper", r.h_upper),
                    ("decision", r.decision), ("jeffreys", r.jeffreys)]
            if r.mbf is not None:
                base += [("mbf", r.mbf), ("alpha_min", r.alpha_min)]
            for i, (v, e, nb) in enumerate(zip(r.ibf, r.ibf_error, r.nibf)):
                base += [(f"ibf_{i + 1}", v), (f"ibf_error_{i + 1}", e), (f"nibf_{i + 1}", nb)]
            for a, v in sorted(r.curve.items()):
                base.append((f"H_alpha_{a}", v["H"]))
            for key, v in sorted(r.classical.items()):
                base.append((key, v))
            out += [(r.t, m, v) for m, v in base]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "metric", "value"])
        for t, m, v in self.tidy_rows():
            w.writerow([t, m, _fmt(v)])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return v


def _clean(o):
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (np.floating, float)):
        o = float(o)
        return o if np.isfinite(o) else str(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    return o


# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _production_calibration(p, n, k, tau, beta, grid, n_scan):
    return bfdist.calibrate_production(p, n, k, tau, beta, grid, n_scan)


@lru_cache(maxsize=16)
def _niw_calibration(p, n, k, m, tau, beta, grid, n_scan, draws, seed):
    return bfdist.calibrate_unknown_v(p, n, k, m, tau, beta, grid, n_scan, draws, seed)


def _fixed_alpha_calibration(dist0, alpha, tau, beta, dist1=None) -> bfdist.CalibrationResult:
    x = dist0.x_quantile(tau)
    hl = float(np.exp(dist0.log_kappa - 0.5 * x))
    pw = float("nan")
    if dist1 is not None and 0 < hl < 1:
        lu = np.log(2.0 - hl)
        pw = 0.0 if lu >= dist1.log_kappa else float(dist1.cdf_r(-2.0 * (lu - dist1.log_kappa)))
    return bfdist.CalibrationResult(float(alpha), hl, 2.0 - hl, tau, beta, pw, True, float(dist0.cdf(hl)), "fixed_alpha")


class _Window:
    """Posterior and scoring objects for one evaluable time index."""

    def __init__(self, cfg: DetectorConfig, win, M_prior, Sigma_L, V):
        self.cfg = cfg
        W, p, n = win.shape
        self.p, self.n = p, n
        phi = float(cfg.window)
        if cfg.regime == "known_v":
            self.model = KnownVModel(M_prior, Sigma_L, V, phi)
            self.post = update_known_v(self.model, win)
            self.k = phi + W
            self.lo = KNOWN_V_ALPHA_MIN
        else:
            Vhat = estimate_v(win, Sigma_L)
            m = 2 * n + 2 + cfg.niw_extra_df
            self.model = NIWModel(M_prior, Sigma_L, phi, 1.0, (m - 2 * n - 2) * Vhat, m)
            self.post = update_niw(self.model, win)
            self.lo = alpha_low_niw(self.post, self.model) + UNKNOWN_V_ALPHA_PAD

    @property
    def M_star(self):
        return self.post.M_star

    def calibration(self) -> bfdist.CalibrationResult:
        cfg = self.cfg
        if cfg.regime == "known_v":
            if cfg.alpha_star is not None:
                d0 = bfdist.production_distribution(self.p, self.n, self.k, cfg.alpha_star, "null")
                d1 = bfdist.production_distribution(self.p, self.n, self.k, cfg.alpha_star, "alternative")
                return _fixed_alpha_calibration(d0, cfg.alpha_star, cfg.tau, cfg.beta, d1)
            return _production_calibration(self.p, self.n, self.k, cfg.tau, cfg.beta,
                                           tuple(cfg.alpha_grid), cfg.n_scan)
        lo_b = alpha_low_niw(self.post, self.model)
        if cfg.alpha_star is not None:
            if cfg.alpha_star <= lo_b:
                raise DomainError(f"alpha_star must exceed (p+2n)/m_d = {lo_b:.6g}")
            mc = bfdist._MCCalibrator(self.p, self.n, self.post.k_star, self.post.m_star, cfg.tau,
                                      cfg.mc_draws, cfg.seed)
            lh, pw = mc.evaluate(cfg.alpha_star)
            hl = float(np.exp(lh))
            return bfdist.CalibrationResult(cfg.alpha_star, hl, 2.0 - hl, cfg.tau, cfg.beta, pw, True,
                                            cfg.tau, "fixed_alpha_monte_carlo")
        grid = (max(cfg.alpha_grid[0], lo_b + 0.01), cfg.alpha_grid[1])
        return _niw_calibration(self.p, self.n, float(self.post.k_star), float(self.post.m_star),
                                cfg.tau, cfg.beta, grid, cfg.n_scan, cfg.mc_draws, cfg.seed)

    def curve(self, Y):
        if self.cfg.regime == "known_v":
            return KnownVCurve(Y, self.post, self.model)
        return UnknownVCurve(Y, self.post, self.model)

    def weights(self):
        if self.cfg.regime == "known_v":
            return robust.default_weights(self.p, self.n, self.cfg.weight_means)
        # stay strictly inside the unknown-V domain: both H and kappa have a pole at the bound
        lower = alpha_low_niw(self.post, self.model)
        lower = lower + 0.01 * (1.0 - lower)
        return robust.default_weights(self.p, self.n, self.cfg.weight_means, lower=lower)

    def guard(self, w):
        regime = "known_v" if self.cfg.regime == "known_v" else "unknown_v"
        m_d = None if regime == "known_v" else self.post.m_star + self.p
        return robust.integrability_guard(regime, self.p, self.n, w, m_d)


def _score(wd: _Window, Y, t, cal: bfdist.CalibrationResult, cfg: DetectorConfig) -> TimeRecord:
    curve = wd.curve(Y)
    a = cal.alpha_star
    lh = float(curve.log_h(a))
    lk = float(curve.log_kappa(a))
    H = float(np.exp(lh))
    dec, label = bfdist.decide_log(lh, cal)
    rec = TimeRecord(int(t), a, H, float(np.exp(lk)), lh, lk, cal.h_lower, cal.h_upper, dec.value, label,
                     calibration_attained=cal.attained)
    for af in cfg.alpha_fixed:
        if af <= wd.lo:
            continue
        rec.curve[float(af)] = {"H": float(curve.h(af)), "kappa": float(curve.kappa(af))}
    if cfg.robust:
        rec.alpha_min, rec.mbf = robust.minimum_bf(curve.log_h, (wd.lo, 1.0), log_scale=True)
        for w in wd.weights():
            g = wd.guard(w)
            if not g.ok:
                rec.ibf.append(float("nan"))
                rec.ibf_error.append(float("nan"))
                rec.nibf.append(float("nan"))
                continue
            q = robust.integrated_bf(curve.log_h, w, log_scale=True)
            rec.ibf.append(q.value)
            rec.ibf_error.append(q.error)
            try:
                rec.nibf.append(robust.normalized_ibf(curve.log_h, curve.log_kappa, w, log_scale=True))
            except robust.DegenerateNormalizerError:
                rec.nibf.append(float("nan"))
    return rec


def run_sequential(series: MatrixSeries, config: DetectorConfig) -> DecisionReport:
    Y = np.asarray(series.values, float)
    T, p, n = Y.shape
    w = int(config.window)
    if T <= w:
        raise DomainError(f"series length {T} must exceed the window {w}")
    V = np.eye(n) if config.V is None else np.asarray(config.V, float)
    if config.V is not None and V.shape != (n, n):
        raise DomainError(f"V must be {n} x {n}")
    # sequential part: posteriors and calibrations in time order
    windows = []
    M_prior = None
    Sigma_L = None
    for i in range(w, T):
        win = Y[i - w:i]
        if M_prior is None:
            M_prior = win.mean(axis=0)
        if config.sigma_estimator == "user_supplied":
            Sigma_L = np.asarray(config.Sigma_L, float)
        elif Sigma_L is None or not config.freeze_sigma:
            Sigma_L = estimate_sigma_l(win, V if config.regime == "known_v" else None)
        wd = _Window(config, win, M_prior, Sigma_L, V)
        windows.append((i, wd, wd.calibration()))
        M_prior = wd.M_star
    # per-time scoring is independent once the posteriors are fixed
    jobs = [(wd, Y[i], series.times[i], cal) for i, wd, cal in windows]
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            records = list(ex.map(lambda j: _score(*j, config), jobs))
    else:
        records = [_score(*j, config) for j in jobs]
    cals = {}
    for _, _, cal in windows:
        cals.setdefault(repr((cal.alpha_star, cal.h_lower)), cal.to_dict())
    if not config.classical_levels:
        return DecisionReport(records, config.snapshot(), {"distinct": list(cals.values())}, (p, n))
    rep = elementwise_scan(series, config.classical_levels, config.bonferroni, window=config.classical_window)
    for rec, (i, _, _) in zip(records, windows):
        for test in sorted(rep.flags):
            for lv in rep.levels:
                rec.classical[f"{test}_{lv:g}_entries"] = int(rep.per_time(test, lv)[i])
                rec.classical[f"{test}_{lv:g}_rows"] = int(rep.rows_with_outlier(test, lv)[i])
                rec.classical[f"{test}_{lv:g}_cols"] = int(rep.cols_with_outlier(test, lv)[i])
    return DecisionReport(records, config.snapshot(), {"distinct": list(cals.values())}, (p, n), rep.errors)


def bf_alpha_curve(series: MatrixSeries, config: DetectorConfig, t, grid: Sequence[float]) -> list:
    """H and kappa on an alpha grid for the observation at time label t."""
    Y = np.asarray(series.values, float)
    T, p, n = Y.shape
    w = int(config.window)
    times = list(series.times)
    if t not in times:
        raise DomainError(f"time {t} not in the series")
    idx = times.index(t)
    if idx < w:
        raise DomainError(f"time {t} is not evaluable with window {w}")
    V = np.eye(n) if config.V is None else np.asarray(config.V, float)
    M_prior = None
    Sigma_L = None
    wd = None
    for i in range(w, idx + 1):
        win = Y[i - w:i]
        if M_prior is None:
            M_prior = win.mean(axis=0)
        if config.sigma_estimator == "user_supplied":
            Sigma_L = np.asarray(config.Sigma_L, float)
        elif Sigma_L is None or not config.freeze_sigma:
            Sigma_L = estimate_sigma_l(win, V if config.regime == "known_v" else None)
        wd = _Window(config, win, M_prior, Sigma_L, V)
        M_prior = wd.M_star
    curve = wd.curve(Y[idx])
    out = []
    for a in grid:
        a = float(a)
        if not (wd.lo <= a <= 1.0):
            raise DomainError(f"alpha={a} outside ({wd.lo:.6g}, 1]")
        out.append(BFEvaluation(int(t), a, float(curve.log_h(a)), float(curve.log_kappa(a))))
    return out


def curve_csv(evals: Sequence[BFEvaluation]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "alpha", "H", "kappa"])
    for e in evals:
        w.writerow([e.t, repr(e.alpha), repr(e.H), repr(e.kappa)])
    return buf.getvalue()


def classical_csv(series: MatrixSeries, config: DetectorConfig) -> str:
    rep = elementwise_scan(series, config.classical_levels, config.bonferroni, window=config.classical_window)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "test", "level", "entries", "rows", "cols"])
    for row in rep.tidy_rows():
        w.writerow(row)
    return buf.getvalue()
