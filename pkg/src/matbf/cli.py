"""Command-line interface: detect, calibrate, simulate, synth and replay.

Exit codes: 0 success, 2 malformed input or arguments, 3 numerical failure,
4 calibration found no alpha reaching the target power.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from numpy.linalg import LinAlgError

from . import __version__, _kernels, bfdist, simlab
from .core import DomainError, InputFormatError, MatrixSeries, SPDError, ShapeError, make_rng, read_series, write_series
from .detector import DetectorConfig, bf_alpha_curve, classical_csv, curve_csv, run_sequential

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_POWER = 0, 2, 3, 4
THREADS_ENV = "MATBF_THREADS"
MANIFEST_NAME = "run_manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text: str):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, argv, config: dict, seed, inputs, started: float):
    man = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "tool_version": __version__,
        "backend": _kernels.backend(),
        "input_digests": {str(p): _digest(p) for p in inputs},
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(man, indent=2, sort_keys=True, default=str) + "\n")


def _load_matrix(path, name):
    if path is None:
        return None
    if not Path(path).exists():
        raise InputFormatError(f"{name} file not found: {path}")
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=","))
    except ValueError as exc:
        raise InputFormatError(f"{name} file {path}: {exc}") from exc


# ---------------------------------------------------------------------------


def cmd_detect(args, argv) -> int:
    started = time.time()
    series = read_series(args.data, args.manifest)
    Sigma_L = _load_matrix(args.sigma_file, "Sigma_L")
    V = _load_matrix(args.v_file, "V")
    try:
        cfg = DetectorConfig(window=args.window, regime=args.regime, tau=args.tau, beta=args.beta,
                             alpha_fixed=args.alpha_grid or (), sigma_estimator="user_supplied" if Sigma_L is not None else "least_squares",
                             Sigma_L=Sigma_L, V=V, freeze_sigma=args.freeze_sigma,
                             alpha_grid=(args.alpha_lo, args.alpha_hi), n_scan=args.n_scan,
                             alpha_star=args.alpha_star, robust=not args.no_robust,
                             classical_levels=args.levels, bonferroni=args.bonferroni,
                             classical_window=args.classical_window, mc_draws=args.mc_draws,
                             seed=args.seed, threads=args.threads)
    except ValueError as exc:
        raise UsageError(str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_sequential(series, cfg)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    if cfg.classical_levels:
        (out / "classical.csv").write_text(classical_csv(series, cfg))
    if args.curve_times:
        grid = np.linspace(max(args.alpha_lo, 1e-3), 1.0, args.curve_points)
        evals = []
        for t in args.curve_times:
            try:
                evals += bf_alpha_curve(series, cfg, t, grid)
            except DomainError as exc:
                raise UsageError(f"--curve-times: {exc}")
        (out / "bf_curve.csv").write_text(curve_csv(evals))
    _write_manifest(out, "detect", argv, cfg.snapshot(), args.seed, [args.data, args.manifest], started)
    n_rej = report.decisions().count("reject_null")
    print(f"detect: {len(report.records)} evaluable times, {n_rej} rejections -> {out}")
    return EXIT_OK


def cmd_calibrate(args, argv) -> int:
    started = time.time()
    if not 0 < args.tau < 1:
        raise UsageError(f"--tau must lie in (0, 1), got {args.tau}")
    if not 0 < args.beta < 1:
        raise UsageError(f"--beta must lie in (0, 1), got {args.beta}")
    if args.p < 1 or args.n < 1 or args.phi <= 0 or args.T < 0:
        raise UsageError("need p, n >= 1, phi > 0 and T >= 0")
    k = args.phi + args.T
    if args.regime == "known_v":
        res = bfdist.calibrate_production(args.p, args.n, k, args.tau, args.beta,
                                          (args.alpha_lo, args.alpha_hi), args.n_scan)
    else:
        m = 2 * args.n + 4 if args.m is None else args.m
        m_star = m + args.T * args.p
        bound = (args.p + 2 * args.n) / (m_star + args.p)
        lo = max(args.alpha_lo, bound + 0.01)
        if not lo < args.alpha_hi:
            raise UsageError(f"alpha range is empty above (p+2n)/m_d = {bound:.4g}")
        res = bfdist.calibrate_unknown_v(args.p, args.n, k, m_star, args.tau, args.beta,
                                         (lo, args.alpha_hi), args.n_scan, args.mc_draws, args.seed)
    text = json.dumps(res.to_dict(with_scan=args.with_scan), indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        _write_manifest(out.parent, "calibrate", argv, vars_snapshot(args), args.seed, [], started)
    else:
        sys.stdout.write(text)
    if not res.attained:
        print(f"calibrate: no alpha in [{args.alpha_lo}, {args.alpha_hi}] reaches power {args.beta}; "
              f"best power {res.achieved_power:.4g} at alpha {res.alpha_star:.4g}", file=sys.stderr)
        return EXIT_POWER
    return EXIT_OK


def _parse_mask(text):
    parts = text.split(":")
    kind = parts[0]
    try:
        if kind == "all" and len(parts) == 1:
            return ("all",)
        if kind == "pattern" and len(parts) == 3:
            return ("pattern", int(parts[1]), int(parts[2]))
        if kind == "random" and len(parts) == 2:
            return ("random", int(parts[1]))
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"mask must be all, pattern:R:C or random:R, got {text!r}")


def cmd_simulate(args, argv) -> int:
    started = time.time()
    p, n = simlab.CASES[args.case] if args.p is None else (args.p, args.n)
    if args.p is not None and args.n is None:
        raise UsageError("--p needs --n")
    J = args.reps if args.reps is not None else (100 if args.case == 1 else 25)
    try:
        base = simlab.Scenario(p=p, n=n, T=args.T, outlier_time=args.outlier_time, J=J, seed=args.seed)
        for m in args.mask:
            simlab.Scenario(p=p, n=n, T=args.T, outlier_time=args.outlier_time, J=J, u=1.0, **simlab._mask_kw(m))
        cfg = simlab.default_sim_config(base, tau=args.tau, beta=args.beta, alpha_star=args.alpha_star,
                                        alpha_grid=(args.alpha_lo, args.alpha_hi))
    except ValueError as exc:
        raise UsageError(str(exc))
    table = simlab.power_table(p, n, args.u, args.mask, J, args.seed, cfg, args.threads, args.null_t, args.v_source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "power_table.csv").write_text(table.to_csv())
    snap = cfg.snapshot()
    snap.update({"p": p, "n": n, "J": J, "u": list(args.u), "masks": [list(m) for m in args.mask],
                 "v_source": args.v_source, "null_t": args.null_t})
    _write_manifest(out, "simulate", argv, snap, args.seed, [], started)
    print(f"simulate: {len(table.cells)} cells, J={J} -> {out / 'power_table.csv'}")
    return EXIT_OK


def cmd_synth(args, argv) -> int:
    """Clean matrix-normal series (optionally with one planted outlier) in the input format."""
    if args.p < 1 or args.n < 1 or args.T < 3:
        raise UsageError("need p, n >= 1 and T >= 3")
    rng = make_rng([args.seed, 0])
    S = rng.standard_normal((args.p, args.p)) / np.sqrt(args.p) + np.eye(args.p)
    G = rng.standard_normal((args.n, args.n)) / np.sqrt(args.n) + np.eye(args.n)
    M = rng.standard_normal((args.p, args.n))
    X = M + S @ rng.standard_normal((args.T, args.p, args.n)) @ G.T
    if args.outlier_time is not None:
        if not 1 <= args.outlier_time <= args.T:
            raise UsageError("--outlier-time must lie in 1..T")
        X[args.outlier_time - 1] += args.u
    series = MatrixSeries.from_arrays(X, times=np.arange(1, args.T + 1))
    Path(args.data).parent.mkdir(parents=True, exist_ok=True)
    Path(args.manifest).parent.mkdir(parents=True, exist_ok=True)
    write_series(series, args.data, args.manifest)
    print(f"synth: {args.T} x {args.p} x {args.n} -> {args.data}")
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    path = Path(args.run_manifest)
    if not path.exists():
        raise InputFormatError(f"run manifest not found: {path}")
    man = json.loads(path.read_text())
    for p, digest in man.get("input_digests", {}).items():
        if not Path(p).exists() or _digest(p) != digest:
            raise InputFormatError(f"input {p} is missing or changed since the recorded run")
    return main(man["argv"])


def vars_snapshot(args) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k != "func"}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="matbf", description="Sequential Bayes-factor outlier detection for matrix series")
    ap.add_argument("--version", action="version", version=f"matbf {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("detect", help="run the rolling-window detector")
    d.add_argument("--data", required=True)
    d.add_argument("--manifest", required=True)
    d.add_argument("--window", type=int, default=50)
    d.add_argument("--regime", choices=("known_v", "unknown_v"), default="known_v")
    d.add_argument("--tau", type=float, default=0.01)
    d.add_argument("--beta", type=float, default=0.8)
    d.add_argument("--alpha-grid", type=_floats, default=None, help="extra fixed alpha values to report")
    d.add_argument("--alpha-star", type=float, default=None, help="use this alpha instead of the power step")
    d.add_argument("--alpha-lo", type=float, default=0.01)
    d.add_argument("--alpha-hi", type=float, default=0.99)
    d.add_argument("--n-scan", type=int, default=64)
    d.add_argument("--levels", type=_floats, default=(0.01, 0.05))
    d.add_argument("--bonferroni", action="store_true")
    d.add_argument("--classical-window", type=int, default=None)
    d.add_argument("--freeze-sigma", action="store_true")
    d.add_argument("--sigma-file", default=None, help="CSV with a user-supplied Sigma_L")
    d.add_argument("--v-file", default=None, help="CSV with a user-supplied V")
    d.add_argument("--no-robust", action="store_true")
    d.add_argument("--curve-times", type=_ints, default=None)
    d.add_argument("--curve-points", type=int, default=100)
    d.add_argument("--mc-draws", type=int, default=10_000)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--threads", type=int, default=_default_threads())
    d.add_argument("--out", default="matbf_out")
    d.set_defaults(func=cmd_detect)

    c = sub.add_parser("calibrate", help="alpha* and the inconclusive interval")
    c.add_argument("--p", type=int, required=True)
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--phi", type=float, required=True)
    c.add_argument("--T", type=int, required=True)
    c.add_argument("--tau", type=float, default=0.01)
    c.add_argument("--beta", type=float, default=0.8)
    c.add_argument("--regime", choices=("known_v", "unknown_v"), default="known_v")
    c.add_argument("--m", type=float, default=None, help="prior inverse-Wishart degrees of freedom (unknown V)")
    c.add_argument("--alpha-lo", type=float, default=0.01)
    c.add_argument("--alpha-hi", type=float, default=0.99)
    c.add_argument("--n-scan", type=int, default=64)
    c.add_argument("--mc-draws", type=int, default=10_000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--with-scan", action="store_true")
    c.add_argument("--threads", type=int, default=_default_threads())
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("simulate", help="size/power table")
    s.add_argument("--case", type=int, choices=(1, 2), default=1)
    s.add_argument("--p", type=int, default=None)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--T", type=int, default=100)
    s.add_argument("--outlier-time", type=int, default=80)
    s.add_argument("--u", type=_floats, default=simlab.MAGNITUDES)
    s.add_argument("--mask", type=_parse_mask, action="append", default=None)
    s.add_argument("--reps", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tau", type=float, default=0.01)
    s.add_argument("--beta", type=float, default=0.8)
    s.add_argument("--alpha-star", type=float, default=None)
    s.add_argument("--alpha-lo", type=float, default=0.01)
    s.add_argument("--alpha-hi", type=float, default=0.99)
    s.add_argument("--null-t", type=int, default=None)
    s.add_argument("--v-source", choices=simlab.V_SOURCES, default="true")
    s.add_argument("--threads", type=int, default=_default_threads())
    s.add_argument("--out", default="matbf_sim")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("synth", help="write a synthetic series in the input format")
    g.add_argument("--p", type=int, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--T", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--outlier-time", type=int, default=None)
    g.add_argument("--u", type=float, default=10.0)
    g.add_argument("--data", required=True)
    g.add_argument("--manifest", required=True)
    g.set_defaults(func=cmd_synth)

    r = sub.add_parser("replay", help="re-run a recorded command")
    r.add_argument("run_manifest")
    r.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        if getattr(args, "command", None) == "simulate" and args.mask is None:
            args.mask = [("all",)]
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be at least 1")
        return args.func(args, argv)
    except UsageError as exc:
        print(f"matbf: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputFormatError, ShapeError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"matbf: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SPDError, LinAlgError, FloatingPointError, bfdist.ConvergenceError) as exc:
        print(f"matbf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as exc:
        print(f"matbf: domain error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
