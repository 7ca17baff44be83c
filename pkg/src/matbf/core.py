"""Domain types, validation helpers and series I/O shared by every module."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import linalg


class ShapeError(ValueError):
    """Raised when array shapes do not conform."""


class SPDError(ValueError):
    """Raised when a matrix that must be symmetric positive definite is not."""


class DomainError(ValueError):
    """Raised when a scalar parameter lies outside its admissible range."""


class InputFormatError(ValueError):
    """Raised for malformed series files or manifests."""


SYM_TOL = 1e-8


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def as_square(A, name="matrix") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {A.shape}")
    return A


def as_matrix(X, name="matrix") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be two dimensional, got shape {X.shape}")
    return X


def validate_spd(A, tol: float = SYM_TOL) -> bool:
    """True when A is symmetric to relative tolerance ``tol`` and Cholesky succeeds."""
    A = as_square(A)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    scale = np.max(np.abs(A))
    if scale == 0.0:
        return False
    if np.max(np.abs(A - A.T)) > tol * scale:
        return False
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return False
    return True


def require_spd(A, name="matrix") -> np.ndarray:
    A = as_square(A, name)
    if not np.all(np.isfinite(A)) or not validate_spd(A):
        raise SPDError(f"{name} is not symmetric positive definite")
    return 0.5 * (A + A.T)


def chol(A, name="matrix") -> np.ndarray:
    """Lower Cholesky factor, raising SPDError on failure."""
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SPDError(f"{name} is not positive definite") from exc


def logdet_from_chol(L) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def chol_solve(L, B) -> np.ndarray:
    """Solve (L L') X = B given the lower factor L."""
    Z = linalg.solve_triangular(L, B, lower=True)
    return linalg.solve_triangular(L.T, Z, lower=False)


def make_rng(seed) -> np.random.Generator:
    """Counter-based 64-bit generator (Philox) used for every simulation."""
    return np.random.Generator(np.random.Philox(seed))


# ---------------------------------------------------------------------------
# data model


@dataclass(frozen=True)
class MatrixObs:
    t: int
    Y: np.ndarray

    def __post_init__(self):
        Y = as_matrix(self.Y, "Y")
        if not np.all(np.isfinite(Y)):
            raise ValueError(f"observation at t={self.t} has non-finite entries")
        object.__setattr__(self, "Y", _frozen(Y))


@dataclass(frozen=True)
class MatrixSeries:
    """Time indexed stack of p x n matrices stored as a (T, p, n) array."""

    times: np.ndarray
    values: np.ndarray
    row_labels: Optional[tuple] = None
    col_labels: Optional[tuple] = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 2:
            vals = vals[None]
        if vals.ndim != 3:
            raise ShapeError(f"values must have shape (T, p, n), got {vals.shape}")
        times = np.asarray(self.times)
        if times.shape != (vals.shape[0],):
            raise ShapeError("one time index is required per observation")
        times = times.astype(np.int64)
        if np.any(np.diff(times) <= 0):
            raise ValueError("time indices must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise ValueError("series contains non-finite entries")
        p, n = vals.shape[1:]
        if p < 1 or n < 1:
            raise ShapeError("matrices must have at least one row and column")
        if self.row_labels is not None and len(self.row_labels) != p:
            raise ShapeError("row_labels length does not match p")
        if self.col_labels is not None and len(self.col_labels) != n:
            raise ShapeError("col_labels length does not match n")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", _frozen(vals))
        if self.row_labels is not None:
            object.__setattr__(self, "row_labels", tuple(str(s) for s in self.row_labels))
        if self.col_labels is not None:
            object.__setattr__(self, "col_labels", tuple(str(s) for s in self.col_labels))

    @classmethod
    def from_arrays(cls, values, times=None, row_labels=None, col_labels=None):
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 2:
            vals = vals[None]
        if times is None:
            times = np.arange(1, vals.shape[0] + 1)
        return cls(times, vals, row_labels, col_labels)

    @property
    def p(self) -> int:
        return int(self.values.shape[1])

    @property
    def n(self) -> int:
        return int(self.values.shape[2])

    @property
    def shape(self):
        return self.p, self.n

    def __len__(self):
        return int(self.values.shape[0])

    @property
    def obs(self) -> list:
        return [MatrixObs(int(t), Y) for t, Y in zip(self.times, self.values)]

    def window(self, start: int, stop: int) -> "MatrixSeries":
        """Positional slice [start, stop)."""
        return MatrixSeries(self.times[start:stop], self.values[start:stop], self.row_labels, self.col_labels)

    def check_shape(self, p: int, n: int):
        if (self.p, self.n) != (p, n):
            raise ShapeError(f"series shape {(self.p, self.n)} does not match model shape {(p, n)}")


def as_stack(data, p=None, n=None) -> np.ndarray:
    """Accept a MatrixSeries, a single matrix or a (T, p, n) array."""
    if isinstance(data, MatrixSeries):
        Y = data.values
    else:
        Y = np.asarray(data, dtype=float)
        if Y.ndim == 2:
            Y = Y[None]
        if Y.ndim != 3:
            raise ShapeError(f"data must have shape (T, p, n), got {Y.shape}")
    if p is not None and Y.shape[1:] != (p, n):
        raise ShapeError(f"data shape {Y.shape[1:]} does not match model shape {(p, n)}")
    return Y


# ---------------------------------------------------------------------------
# models and posteriors


@dataclass(frozen=True)
class KnownVModel:
    """Matrix normal likelihood with known column covariance V and prior
    B ~ MN(M, Sigma_L / phi, V)."""

    M: np.ndarray
    Sigma_L: np.ndarray
    V: np.ndarray
    phi: float

    def __post_init__(self):
        M = as_matrix(self.M, "M")
        S = require_spd(self.Sigma_L, "Sigma_L")
        V = require_spd(self.V, "V")
        if S.shape[0] != M.shape[0] or V.shape[0] != M.shape[1]:
            raise ShapeError("Sigma_L must be p x p and V must be n x n for a p x n mean")
        if not (np.isfinite(self.phi) and self.phi > 0):
            raise DomainError("phi must be positive")
        object.__setattr__(self, "M", _frozen(M))
        object.__setattr__(self, "Sigma_L", _frozen(S))
        object.__setattr__(self, "V", _frozen(V))
        object.__setattr__(self, "phi", float(self.phi))

    @property
    def p(self):
        return self.M.shape[0]

    @property
    def n(self):
        return self.M.shape[1]


@dataclass(frozen=True)
class NIWModel:
    """Matrix normal inverse Wishart prior: B | V ~ MN(M, Sigma_L/phi, V/rho),
    V ~ IW(Psi, m) with the (m - n - 1)/2 exponent convention."""

    M: np.ndarray
    Sigma_L: np.ndarray
    phi: float
    rho: float
    Psi: np.ndarray
    m: float

    def __post_init__(self):
        M = as_matrix(self.M, "M")
        S = require_spd(self.Sigma_L, "Sigma_L")
        Psi = require_spd(self.Psi, "Psi")
        p, n = M.shape
        if S.shape[0] != p or Psi.shape[0] != n:
            raise ShapeError("Sigma_L must be p x p and Psi must be n x n for a p x n mean")
        if not (self.phi > 0 and self.rho > 0):
            raise DomainError("phi and rho must be positive")
        if not self.m > 2 * n:
            raise DomainError(f"degrees of freedom m={self.m} must exceed 2n={2 * n}")
        object.__setattr__(self, "M", _frozen(M))
        object.__setattr__(self, "Sigma_L", _frozen(S))
        object.__setattr__(self, "Psi", _frozen(Psi))
        for name in ("phi", "rho", "m"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def k(self) -> float:
        return self.rho * self.phi

    @property
    def p(self):
        return self.M.shape[0]

    @property
    def n(self):
        return self.M.shape[1]


@dataclass(frozen=True)
class PosteriorKnownV:
    M_star: np.ndarray
    Sigma_star: np.ndarray
    T: int

    def __post_init__(self):
        object.__setattr__(self, "M_star", _frozen(self.M_star))
        object.__setattr__(self, "Sigma_star", _frozen(self.Sigma_star))

    def as_prior(self, model: KnownVModel) -> KnownVModel:
        """Posterior expressed as a prior, for chaining sequential updates."""
        return KnownVModel(self.M_star, model.Sigma_L, model.V, model.phi + self.T)


@dataclass(frozen=True)
class PosteriorNIW:
    M_star: np.ndarray
    k_star: float
    m_star: float
    Psi_star: np.ndarray
    T: int

    def __post_init__(self):
        object.__setattr__(self, "M_star", _frozen(self.M_star))
        object.__setattr__(self, "Psi_star", _frozen(self.Psi_star))

    def as_prior(self, model: NIWModel) -> NIWModel:
        return NIWModel(self.M_star, model.Sigma_L, self.k_star / model.rho, model.rho, self.Psi_star, self.m_star)


# ---------------------------------------------------------------------------
# I/O: long CSV (t,row,col,value) + JSON manifest


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InputFormatError(f"manifest file not found: {path}")
    try:
        man = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(man, dict):
        raise InputFormatError(f"manifest {path} must be a JSON object")
    for key in ("p", "n"):
        if not isinstance(man.get(key), int) or man[key] < 1:
            raise InputFormatError(f"manifest {path} needs a positive integer '{key}'")
    for key, size in (("row_labels", man["p"]), ("col_labels", man["n"])):
        labels = man.get(key)
        if labels is not None and (not isinstance(labels, list) or len(labels) != size):
            raise InputFormatError(f"manifest {path}: '{key}' must be a list of length {size}")
    return man


def parse_series(csv_text: str, manifest: dict) -> MatrixSeries:
    p, n = manifest["p"], manifest["n"]
    reader = csv.reader(io.StringIO(csv_text))
    try:
        header = next(reader)
    except StopIteration:
        raise InputFormatError("data file is empty")
    if [h.strip() for h in header] != ["t", "row", "col", "value"]:
        raise InputFormatError(f"expected header t,row,col,value, got {','.join(header)}")
    cells = {}
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != 4:
            raise InputFormatError(f"line {lineno}: expected 4 fields, got {len(rec)}")
        try:
            t, i, j = int(rec[0]), int(rec[1]), int(rec[2])
            v = float(rec[3])
        except ValueError as exc:
            raise InputFormatError(f"line {lineno}: {exc}") from exc
        if not (1 <= i <= p and 1 <= j <= n):
            raise InputFormatError(f"line {lineno}: cell ({i},{j}) outside the {p}x{n} manifest shape")
        if not math.isfinite(v):
            raise InputFormatError(f"line {lineno}: non-finite value")
        key = (t, i, j)
        if key in cells:
            raise InputFormatError(f"line {lineno}: duplicate cell t={t} row={i} col={j}")
        cells[key] = v
    times = sorted({k[0] for k in cells})
    if not times:
        raise InputFormatError("data file has no observations")
    pos = {t: s for s, t in enumerate(times)}
    vals = np.full((len(times), p, n), np.nan)
    for (t, i, j), v in cells.items():
        vals[pos[t], i - 1, j - 1] = v
    missing = np.argwhere(np.isnan(vals))
    if missing.size:
        s, i, j = missing[0]
        raise InputFormatError(
            f"{len(missing)} missing cells, first at t={times[s]} row={i + 1} col={j + 1}")
    return MatrixSeries(np.array(times), vals, manifest.get("row_labels"), manifest.get("col_labels"))


def read_series(data_path, manifest_path) -> MatrixSeries:
    man = read_manifest(manifest_path)
    data_path = Path(data_path)
    if not data_path.exists():
        raise InputFormatError(f"data file not found: {data_path}")
    return parse_series(data_path.read_text(), man)


def format_series(series: MatrixSeries) -> str:
    # repr of a float is the shortest string that round-trips exactly
    out = ["t,row,col,value"]
    for t, Y in zip(series.times, series.values):
        for i in range(series.p):
            for j in range(series.n):
                out.append(f"{int(t)},{i + 1},{j + 1},{float(Y[i, j])!r}")
    return "\n".join(out) + "\n"


def manifest_for(series: MatrixSeries) -> dict:
    return {
        "p": series.p,
        "n": series.n,
        "row_labels": list(series.row_labels) if series.row_labels else [f"r{i + 1}" for i in range(series.p)],
        "col_labels": list(series.col_labels) if series.col_labels else [f"c{j + 1}" for j in range(series.n)],
    }


def write_series(series: MatrixSeries, data_path, manifest_path):
    Path(data_path).write_text(format_series(series))
    Path(manifest_path).write_text(json.dumps(manifest_for(series), indent=2))
