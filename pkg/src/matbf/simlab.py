"""Simulation protocol for size and power of the calibrated detector.

Each replication draws M ~ N(0, I, I), Sigma = SS', Psi = GG' with S, G standard normal,
noise E_t ~ MN(0, Sigma, Psi) for t = 1..T and adds u R at the outlier time.  The detector
runs with window w (phi = w) and re-estimates Sigma_L by least squares; V is either the
generating Psi (default, the known-V assumption) or the identity.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import MatrixSeries, make_rng
from .detector import DetectorConfig, run_sequential

MAGNITUDES = (0.5, 1.0, 1.5, 3.0, 5.0, 15.0)
CASES = {1: (30, 10), 2: (50, 50)}
OUTCOMES = ("p_I", "p_II", "p_III")
LABELS = {"p_I": "P(H>h_upper)", "p_II": "P(h_lower<H<h_upper)", "p_III": "P(H<h_lower)"}


@dataclass(frozen=True)
class Scenario:
    p: int = 30
    n: int = 10
    T: int = 100
    outlier_time: int = 80
    u: float = 0.0
    mask_kind: str = "all"          # all | pattern | random
    mask_rows: int = 0
    mask_cols: int = 0
    mask_entries: int = 0
    J: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.n < 1:
            raise ValueError("p and n must be positive")
        if not 1 <= self.outlier_time <= self.T:
            raise ValueError("outlier_time must lie in 1..T")
        if self.u < 0:
            raise ValueError("u must be nonnegative")
        if self.mask_kind not in ("all", "pattern", "random"):
            raise ValueError("mask_kind must be all, pattern or random")
        if self.mask_kind == "pattern" and not (1 <= self.mask_rows <= self.p and 1 <= self.mask_cols <= self.n):
            raise ValueError("pattern masks need 1 <= rows <= p and 1 <= cols <= n")
        if self.mask_kind == "random" and not 1 <= self.mask_entries <= self.p * self.n:
            raise ValueError("random masks need 1 <= entries <= pn")
        if self.J < 1:
            raise ValueError("J must be at least 1")

    @property
    def label(self) -> str:
        if self.u == 0:
            return "H0"
        if self.mask_kind == "all":
            m = "all"
        elif self.mask_kind == "pattern":
            m = f"{self.mask_rows}x{self.mask_cols}"
        else:
            m = f"r{self.mask_entries}"
        return f"u={self.u:g}:{m}"


def pattern_mask(p, n, r, c, rng) -> np.ndarray:
    """r random rows times c random columns."""
    R = np.zeros((p, n), bool)
    rows = rng.choice(p, r, replace=False)
    cols = rng.choice(n, c, replace=False)
    R[np.ix_(rows, cols)] = True
    return R


def random_mask(p, n, r, rng) -> np.ndarray:
    R = np.zeros(p * n, bool)
    R[rng.choice(p * n, r, replace=False)] = True
    return R.reshape(p, n)


def make_mask(sc: Scenario, rng) -> np.ndarray:
    if sc.mask_kind == "all":
        return np.ones((sc.p, sc.n), bool)
    if sc.mask_kind == "pattern":
        return pattern_mask(sc.p, sc.n, sc.mask_rows, sc.mask_cols, rng)
    return random_mask(sc.p, sc.n, sc.mask_entries, rng)


def _draw(sc: Scenario, rep: int):
    rng = make_rng([sc.seed, rep, 0])
    p, n = sc.p, sc.n
    M = rng.standard_normal((p, n))
    S = rng.standard_normal((p, p))
    G = rng.standard_normal((n, n))
    Z = rng.standard_normal((sc.T, p, n))
    X = M + S @ Z @ G.T                 # E_t ~ MN(0, SS', GG')
    mask = make_mask(sc, make_rng([sc.seed, rep, 1]))
    if sc.u > 0:
        X[sc.outlier_time - 1] += sc.u * mask
    return X, mask, S @ S.T, G @ G.T


def generate_scenario(sc: Scenario, rep: int = 0):
    """(series, mask) for one replication.  The parameter and noise streams depend only on
    (seed, rep), so scenarios differing in u or mask share them."""
    X, mask, _, _ = _draw(sc, rep)
    return MatrixSeries.from_arrays(X, times=np.arange(1, sc.T + 1)), mask


def true_covariances(sc: Scenario, rep: int = 0):
    """(Sigma, Psi) used by replication rep."""
    _, _, Sigma, Psi = _draw(sc, rep)
    return Sigma, Psi


def default_sim_config(sc: Scenario, **kw) -> DetectorConfig:
    """Detector settings for the protocol: w = phi = outlier_time - 1, known-V regime."""
    base = dict(window=sc.outlier_time - 1, robust=False, classical_levels=())
    base.update(kw)
    return DetectorConfig(**base)


V_SOURCES = ("true", "identity")


def _one_rep(args):
    sc, cfg, rep, v_source = args
    X, _, _, Psi = _draw(sc, rep)
    series = MatrixSeries.from_arrays(X, times=np.arange(1, sc.T + 1))
    if v_source == "true":
        cfg = replace(cfg, V=Psi)
    report = run_sequential(series, cfg)
    t = np.array([r.t for r in report.records])
    codes = {"accept_null": 0, "inconclusive": 1, "reject_null": 2}
    return t, np.array([codes[r.decision] for r in report.records])


@dataclass
class PowerTable:
    """cells[label] = {'p_I','p_II','p_III','count','se_*'}."""
    cells: dict = field(default_factory=dict)
    J: int = 0
    meta: dict = field(default_factory=dict)

    def add(self, label, outcomes):
        outcomes = np.asarray(outcomes).ravel()
        N = outcomes.size
        cell = {"count": int(N)}
        for code, name in enumerate(OUTCOMES):
            k = int(np.sum(outcomes == code))
            pr = k / N
            cell[name] = pr
            cell["se_" + name] = float(np.sqrt(pr * (1 - pr) / N))
        self.cells[label] = cell

    def to_csv(self) -> str:
        """Wide layout: probability rows, one column per scenario cell."""
        labels = list(self.cells)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["probability"] + labels)
        for name in OUTCOMES:
            w.writerow([LABELS[name]] + [f"{self.cells[l][name]:.4f}" for l in labels])
        for name in OUTCOMES:
            w.writerow(["se " + LABELS[name]] + [f"{self.cells[l]['se_' + name]:.4f}" for l in labels])
        w.writerow(["count"] + [self.cells[l]["count"] for l in labels])
        return buf.getvalue()


def run_replications(sc: Scenario, cfg: DetectorConfig, workers: int = 1, v_source: str = "true"):
    """Per-replication (times, outcome codes 0/1/2 = accept/inconclusive/reject).  With
    v_source='true' the detector receives the generating column covariance Psi; with
    'identity' it assumes V = I."""
    if v_source not in V_SOURCES:
        raise ValueError(f"v_source must be one of {V_SOURCES}")
    jobs = [(sc, cfg, j, v_source) for j in range(sc.J)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_one_rep, jobs))
    return [_one_rep(j) for j in jobs]


def estimate_probabilities(sc: Scenario, cfg: Optional[DetectorConfig] = None, workers: int = 1,
                           null_t: Optional[int] = None, table: Optional[PowerTable] = None,
                           v_source: str = "true") -> PowerTable:
    """Outcome frequencies at the outlier time and, for the null cell, pooled over the other
    evaluable times (or at the single time ``null_t``)."""
    cfg = cfg or default_sim_config(sc)
    table = table or PowerTable(J=sc.J)
    res = run_replications(sc, cfg, workers, v_source)
    at = np.concatenate([o[t == sc.outlier_time] for t, o in res])
    if null_t is None:
        null = np.concatenate([o[t != sc.outlier_time] for t, o in res])
    else:
        null = np.concatenate([o[t == null_t] for t, o in res])
    if sc.u == 0:
        table.add("H0", null)
    else:
        table.add(sc.label, at)
    table.meta.setdefault("v_source", v_source)
    return table


def power_table(p, n, magnitudes: Sequence[float] = MAGNITUDES, masks: Sequence[tuple] = (("all",),),
                J: int = 100, seed: int = 0, cfg: Optional[DetectorConfig] = None, workers: int = 1,
                null_t: Optional[int] = None, v_source: str = "true") -> PowerTable:
    """H0 column followed by one column per (u, mask).  Masks: ('all',), ('pattern', r, c), ('random', r)."""
    base = Scenario(p=p, n=n, J=J, seed=seed)
    cfg = cfg or default_sim_config(base)
    table = PowerTable(J=J)
    estimate_probabilities(base, cfg, workers, null_t, table, v_source)
    for u in magnitudes:
        for m in masks:
            sc = replace(base, u=float(u), **_mask_kw(m))
            estimate_probabilities(sc, cfg, workers, null_t, table, v_source)
    return table


def _mask_kw(m):
    kind = m[0]
    if kind == "all":
        return {"mask_kind": "all"}
    if kind == "pattern":
        return {"mask_kind": "pattern", "mask_rows": int(m[1]), "mask_cols": int(m[2])}
    if kind == "random":
        return {"mask_kind": "random", "mask_entries": int(m[1])}
    raise ValueError(f"unknown mask {m!r}")
