"""Time the numba kernels against the pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from matbf import _kernels
from matbf.classical import gesd_critical


def _best(fn, repeat):
    out = None
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_ruben(repeat):
    import numba
    jit = numba.njit(cache=True)(_kernels._ruben_loop)
    rng = np.random.default_rng(0)
    rows = []
    for p in (5, 30, 100):
        lam = rng.uniform(0.2, 3.0, p)
        U = rng.uniform(0.0, 2.0, p)
        lmin = lam.min()
        r, u = 1 - lmin / lam, lmin * U / lam
        log_c0 = -U.sum() - 0.5 * 2 * np.sum(np.log(lam / lmin))
        args = (r, u, 2.0, float(log_c0), 1e-12, 10_000)
        jit(*args)  # compile
        t_nb, (c_nb, _) = _best(lambda: jit(*args), repeat)
        t_np, (c_np, _) = _best(lambda: _kernels._ruben_numpy(*args), repeat)
        rows.append((f"ruben p={p} K={c_nb.size}", t_nb, t_np, float(np.max(np.abs(c_nb - c_np)))))
    return rows


def bench_gesd(repeat):
    import numba
    jit = numba.njit(cache=True)(_kernels._gesd_loop)
    rng = np.random.default_rng(1)
    rows = []
    for S, N in ((300, 100), (2500, 100), (2500, 500)):
        X = rng.standard_normal((S, N))
        r = int(np.ceil(0.1 * N))
        crit = gesd_critical(N, r, 0.05)
        jit(X, r, crit)
        t_nb, (R_nb, _) = _best(lambda: jit(X, r, crit), repeat)
        t_np, (R_np, _) = _best(lambda: _kernels._gesd_numpy(X, r, crit), repeat)
        rows.append((f"gesd {S} series x {N}", t_nb, t_np, float(np.nanmax(np.abs(R_nb - R_np)))))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'case':32s} {'numba [s]':>11s} {'numpy [s]':>11s} {'speedup':>8s} {'max diff':>10s}")
    for name, t_nb, t_np, diff in bench_ruben(args.repeat) + bench_gesd(args.repeat):
        print(f"{name:32s} {t_nb:11.5f} {t_np:11.5f} {t_np / t_nb:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
