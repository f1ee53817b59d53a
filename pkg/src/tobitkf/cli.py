"""Command-line interface.

Exit codes
----------
0   success
1   numerical check failed (moments-check deviation) or a filter failed
2   too many benchmark iterations aborted
3   the likelihood maximum lies on the edge of the q grid
64  usage error (bad flags or inconsistent parameters)
65  input data could not be read (schema, empty file, timestamps, no overlap)
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import (
    BenchmarkAborted,
    EmptyFile,
    NoInteriorMaximum,
    NonMonotoneTimestamps,
    NoOverlap,
    SchemaMismatch,
    TobitKFError,
)
from .likelihood import Variant, estimate_q
from .moments import (
    CensorBounds,
    MvnSpec,
    censored_moments,
    mc_censored_oracle,
    standardized_limits,
    region_probs_from_limits,
    truncated_normal_variance,
)
from .simulation import OscillatorConfig, run_oscillator_benchmark, smoothness_metric
from .trajectory_io import (
    AXES,
    SKELETON_METHODS,
    JointFilterError,
    SkeletonFilterParams,
    evaluate_against_reference,
    filter_skeleton,
    parse_skeleton_csv,
    write_rmse_csv,
    write_skeleton_csv,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ABORTED = 2
EXIT_BOUNDARY = 3
EXIT_USAGE = 64
EXIT_DATAERR = 65

_DATA_ERRORS = (SchemaMismatch, EmptyFile, NonMonotoneTimestamps, NoOverlap, FileNotFoundError)

# Defaults of the moments check: a three-dimensional censored normal.
WORKED_MEAN = (2.0, 2.0, 3.0)
WORKED_COV = ((5.0, 3.0, 4.0), (3.0, 5.0, 4.0), (4.0, 4.0, 5.0))
WORKED_LOWER = (-1.0, -3.0, 1.0)
WORKED_UPPER = (1.0, 7.0, 4.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _protect_negative_infinity(argv: Sequence[str]) -> list[str]:
    # argparse would read "-inf" as an option; a leading space keeps it a value
    # and float() still accepts it.
    return [" " + a if a.lower() in ("-inf", "-infinity") else a for a in argv]


def _odd_window(text: str) -> int:
    v = int(text)
    if v < 1 or v % 2 == 0:
        raise argparse.ArgumentTypeError(f"window must be a positive odd integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tobitkf", description="Tobit Kalman filtering experiments and tools.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        sp.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory (default ./out)")

    d = OscillatorConfig()
    o = sub.add_parser("oscillator", help="saturated oscillator RMSE benchmark")
    common(o)
    o.add_argument("--iterations", type=int, default=100)
    o.add_argument("--steps", type=int, default=d.steps)
    o.add_argument("--c", type=float, default=d.c, help="damping factor")
    o.add_argument("--w", type=float, default=d.w, help="rotation per step (rad)")
    o.add_argument("--q-std", type=float, default=d.q_std)
    o.add_argument("--v-noise", type=float, default=d.v_noise, help="measurement noise variance")
    o.add_argument("--a", type=float, default=d.a, help="lower limit")
    o.add_argument("--b", type=float, default=d.b, help="upper limit")

    m = sub.add_parser("moments-check", help="analytic censored moments against Monte Carlo")
    common(m)
    m.add_argument("--dim", type=int, default=None)
    m.add_argument("--mean", type=float, nargs="+", default=None)
    m.add_argument("--cov", type=float, nargs="+", default=None, help="row-major covariance")
    m.add_argument("--var", type=float, nargs="+", default=None, help="diagonal covariance")
    m.add_argument(
        "--bounds", type=float, nargs="+", default=None,
        help="lo hi pairs per component; a single pair applies to all components",
    )
    m.add_argument("--r", type=float, default=1.0, help="noise variance for the baseline matrix")
    m.add_argument("--samples", type=int, default=100_000)
    m.add_argument("--reps", type=int, default=100)
    m.add_argument("--max-se", type=float, default=4.0, help="allowed deviation in standard errors")

    sp = SkeletonFilterParams()

    def skeleton_model(parser):
        parser.add_argument("--r", type=float, default=sp.r)
        parser.add_argument("--q", type=float, default=sp.q)
        parser.add_argument("--p0", type=float, default=sp.p0)
        parser.add_argument("--c-vec", type=float, nargs=3, default=sp.c, metavar=("CX", "CY", "CZ"))
        parser.add_argument("--lower", type=float, nargs=3, default=sp.lower, metavar=("X", "Y", "Z"))
        parser.add_argument("--upper", type=float, nargs=3, default=sp.upper, metavar=("X", "Y", "Z"))

    f = sub.add_parser("filter", help="filter a skeleton CSV")
    common(f)
    f.add_argument("--input", type=Path, required=True)
    f.add_argument("--method", choices=SKELETON_METHODS, default="atkf")
    f.add_argument("--output", default="filtered.csv", help="file name inside --out-dir")
    f.add_argument("--window", type=_odd_window, default=sp.window)
    f.add_argument("--order", type=int, default=sp.order)
    skeleton_model(f)

    q = sub.add_parser("estimate-q", help="maximum-likelihood process noise for a skeleton CSV")
    common(q)
    q.add_argument("--input", type=Path, required=True)
    q.add_argument("--q-grid", type=float, nargs="+", default=None)
    q.add_argument("--q-min", type=float, default=1e-4)
    q.add_argument("--q-max", type=float, default=1e-1)
    q.add_argument("--q-num", type=int, default=13)
    q.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.CORRECTED.value)
    q.add_argument("--joints", nargs="+", default=None, help="restrict to these joints")
    skeleton_model(q)

    e = sub.add_parser("evaluate", help="positional RMSE against a reference recording")
    common(e)
    e.add_argument("--test", type=Path, required=True)
    e.add_argument("--reference", type=Path, required=True)
    e.add_argument("--lag", type=int, default=None, help="single lag")
    e.add_argument("--lag-min", type=int, default=0)
    e.add_argument("--lag-max", type=int, default=0)
    return p


def _echo(args: argparse.Namespace) -> list[str]:
    lines = [f"tobitkf {__version__}", f"command={args.command}"]
    for k, v in sorted(vars(args).items()):
        if k == "command":
            continue
        if isinstance(v, (list, tuple)):
            v = " ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k}={v}")
    return lines


def _write_table(path: Path, echo: list[str], header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in echo:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# -- oscillator ----------------------------------------------------------------

def cmd_oscillator(args) -> int:
    if not args.a < args.b:
        raise UsageError(f"--a must be below --b (got {args.a} and {args.b})")
    if args.iterations < 1 or args.steps < 1:
        raise UsageError("--iterations and --steps must be positive")
    if args.q_std < 0 or args.v_noise < 0:
        raise UsageError("noise levels must be nonnegative")
    cfg = OscillatorConfig(
        c=args.c, w=args.w, q_std=args.q_std, v_noise=args.v_noise,
        a=args.a, b=args.b, steps=args.steps, seed=args.seed,
    )
    try:
        table = run_oscillator_benchmark(cfg, args.iterations)
    except BenchmarkAborted as exc:
        print(f"benchmark aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    echo = _echo(args)
    names = {"tkf": "TKF", "tkfc": "TKFc"}
    _write_table(
        args.out_dir / "table1.csv", echo, ["filter", "rmse_x1", "rmse_x2"],
        [[names[f], *table.mean_rmse[f]] for f in ("tkf", "tkfc")],
    )
    diff = table.difference("tkf", "tkfc")
    _write_table(
        args.out_dir / "rmse_diff.csv", echo, ["seed", "diff_x1", "diff_x2"],
        [[s, *d] for s, d in zip(table.seeds, diff)],
    )
    for f in ("tkf", "tkfc"):
        r = table.mean_rmse[f]
        print(f"{names[f]:5s} mean RMSE  x1={r[0]:.4f}  x2={r[1]:.4f}")
    if table.n_failed:
        print(f"{table.n_failed} iteration(s) skipped after filter errors", file=sys.stderr)
    return EXIT_OK


# -- moments-check -------------------------------------------------------------

def _moments_inputs(args):
    mean = args.mean
    if args.cov is not None and args.var is not None:
        raise UsageError("give either --cov or --var, not both")
    dim = args.dim
    if dim is None:
        dim = len(mean) if mean is not None else (len(args.var) if args.var else len(WORKED_MEAN))
    if mean is None:
        mean = WORKED_MEAN if dim == len(WORKED_MEAN) else [0.0] * dim
    if len(mean) == 1 and dim > 1:
        mean = list(mean) * dim
    if len(mean) != dim:
        raise UsageError(f"--mean needs {dim} values")
    if args.cov is not None:
        if len(args.cov) != dim * dim:
            raise UsageError(f"--cov needs {dim * dim} values")
        cov = np.reshape(args.cov, (dim, dim))
    elif args.var is not None:
        var = list(args.var) * dim if len(args.var) == 1 else args.var
        if len(var) != dim:
            raise UsageError(f"--var needs {dim} values")
        cov = np.diag(var)
    else:
        cov = np.array(WORKED_COV) if dim == len(WORKED_MEAN) else np.eye(dim)
    if args.bounds is None:
        if dim != len(WORKED_LOWER):
            raise UsageError("--bounds is required unless the dimension is 3")
        lower, upper = WORKED_LOWER, WORKED_UPPER
    else:
        pairs = args.bounds
        if len(pairs) == 2:
            pairs = list(pairs) * dim
        if len(pairs) != 2 * dim:
            raise UsageError(f"--bounds needs 2 or {2 * dim} values")
        lower, upper = pairs[0::2], pairs[1::2]
    try:
        spec = MvnSpec(mean, cov)
        bounds = CensorBounds(lower, upper)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.r <= 0:
        raise UsageError("--r must be positive")
    if args.samples < 2 or args.reps < 2:
        raise UsageError("--samples and --reps must be at least 2")
    return spec, bounds


def baseline_covariance(spec: MvnSpec, bounds: CensorBounds, r: float) -> np.ndarray:
    """Approximate censored covariance with noise-standardized limits.

    ``spec.cov`` is read as ``H P H' + r I``.
    """
    rr = np.full(spec.dim, r)
    alpha, beta = standardized_limits(spec.mean, np.sqrt(rr), bounds)
    d_un = region_probs_from_limits(alpha, beta).inside
    HPH = spec.cov - np.diag(rr)
    return d_un[:, None] * HPH * d_un[None, :] + np.diag(rr * truncated_normal_variance(alpha, beta))


def _fmt(M) -> str:
    return np.array2string(np.atleast_1d(M), precision=4, suppress_small=True, floatmode="fixed")


def cmd_moments_check(args) -> int:
    spec, bounds = _moments_inputs(args)
    mom = censored_moments(spec, bounds)
    base = baseline_covariance(spec, bounds, args.r)
    mc = mc_censored_oracle(spec, bounds, args.samples, args.reps, args.seed)

    def z_scores(analytic, sample, se):
        d = np.abs(analytic - sample)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(se > 0, d / se, np.where(d <= 1e-12, 0.0, np.inf))

    z_mean = z_scores(mom.mean, mc.mean, mc.mean_stderr)
    z_cov = z_scores(mom.cov, mc.cov, mc.cov_stderr)
    worst = float(max(z_mean.max(), z_cov.max()))

    print("censored mean (analytic):", _fmt(mom.mean))
    print("censored mean (Monte Carlo):", _fmt(mc.mean))
    print("censored covariance (analytic):\n" + _fmt(mom.cov))
    print("censored covariance (Monte Carlo):\n" + _fmt(mc.cov))
    print("baseline covariance:\n" + _fmt(base))
    print(f"max |analytic - Monte Carlo|: mean {np.max(np.abs(mom.mean - mc.mean)):.3g}, "
          f"cov {np.max(np.abs(mom.cov - mc.cov)):.3g}")
    print(f"max |analytic - baseline| cov: {np.max(np.abs(mom.cov - base)):.3g}")
    print(f"largest deviation: {worst:.2f} standard errors (limit {args.max_se})")

    rows = []
    d = spec.dim
    for i in range(d):
        rows.append(["mean", i, -1, mom.mean[i], mc.mean[i], mc.mean_stderr[i], math.nan])
    for i in range(d):
        for j in range(d):
            rows.append(["cov", i, j, mom.cov[i, j], mc.cov[i, j], mc.cov_stderr[i, j], base[i, j]])
    _write_table(
        args.out_dir / "moments_check.csv", _echo(args),
        ["quantity", "i", "j", "analytic", "monte_carlo", "stderr", "baseline"], rows,
    )
    if worst >= args.max_se:
        print("FAIL: analytic moments disagree with the Monte Carlo estimate", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


# -- skeleton commands ---------------------------------------------------------

def _skeleton_params(args) -> SkeletonFilterParams:
    for name in ("r", "q", "p0"):
        if getattr(args, name) <= 0:
            raise UsageError(f"--{name} must be positive")
    if any(v <= 0 for v in args.c_vec):
        raise UsageError("--c-vec entries must be positive")
    if any(lo >= hi for lo, hi in zip(args.lower, args.upper)):
        raise UsageError("--lower must be below --upper in every coordinate")
    extra = {}
    if hasattr(args, "window"):
        if not 0 <= args.order < args.window:
            raise UsageError("--order must satisfy 0 <= order < window")
        extra = {"window": args.window, "order": args.order}
    return SkeletonFilterParams(
        r=args.r, q=args.q, p0=args.p0, c=tuple(args.c_vec),
        lower=tuple(args.lower), upper=tuple(args.upper), **extra,
    )


def cmd_filter(args) -> int:
    params = _skeleton_params(args)
    frames = parse_skeleton_csv(args.input)
    if frames.dropped_rows:
        print(f"dropped {len(frames.dropped_rows)} row(s) with non-finite values: "
              f"{list(frames.dropped_rows)}", file=sys.stderr)
    if args.method == "sgf" and frames.n_frames < params.window:
        raise UsageError(f"--window {params.window} exceeds the {frames.n_frames} frames available")
    try:
        out = filter_skeleton(frames, args.method, params)
    except JointFilterError as exc:
        print(f"filter failed: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    echo = _echo(args)
    write_skeleton_csv(out, args.out_dir / args.output, echo)
    rows, all_m = [], []
    for name, s in out.joints.items():
        m = smoothness_metric(s.channels)
        all_m.extend(m)
        rows.extend([name, a, v] for a, v in zip(AXES, m))
    overall = float(np.mean(all_m))
    rows.append(["ALL", "all", overall])
    _write_table(args.out_dir / "metrics.csv", echo, ["joint", "channel", "m"], rows)
    print(f"{args.method}: {out.n_frames} frames, overall smoothness M = {overall:.6g}")
    return EXIT_OK


def cmd_estimate_q(args) -> int:
    params = _skeleton_params(args)
    if args.q_grid is not None:
        grid = np.asarray(args.q_grid, dtype=float)
    else:
        if not 0 < args.q_min < args.q_max or args.q_num < 1:
            raise UsageError("need 0 < --q-min < --q-max and --q-num >= 1")
        grid = np.geomspace(args.q_min, args.q_max, args.q_num)
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise UsageError("--q-grid must be positive and strictly increasing")
    frames = parse_skeleton_csv(args.input)
    names = args.joints or list(frames.joints)
    unknown = [j for j in names if j not in frames.joints]
    if unknown:
        raise UsageError(f"unknown joints: {unknown}")
    if frames.n_frames < 2:
        raise SchemaMismatch("estimating q needs at least two frames")
    series = [frames.joints[j].channels for j in names]
    template = params.model()
    bounds = params.bounds()
    echo = _echo(args)
    try:
        q_hat, grid, profile = estimate_q(
            template, series, bounds, grid, args.variant, return_profile=True
        )
        status = EXIT_OK
    except NoInteriorMaximum as exc:
        q_hat, status, profile = exc.q, EXIT_BOUNDARY, exc.profile
    _write_table(args.out_dir / "q_profile.csv", echo, ["q", "loglik"], zip(grid, profile))
    print("q,loglik")
    for qv, ll in zip(grid, profile):
        print(f"{qv!r},{ll!r}")
    if status == EXIT_BOUNDARY:
        print(f"maximum at grid edge q={q_hat!r}; widen the grid", file=sys.stderr)
    else:
        print(f"q_hat={q_hat!r}")
    return status


def cmd_evaluate(args) -> int:
    if args.lag is not None:
        lags = [args.lag]
    else:
        if args.lag_min > args.lag_max:
            raise UsageError("--lag-min must not exceed --lag-max")
        lags = list(range(args.lag_min, args.lag_max + 1))
    test = parse_skeleton_csv(args.test)
    ref = parse_skeleton_csv(args.reference)
    table = evaluate_against_reference(test, ref, lags)
    write_rmse_csv(table, args.out_dir / "rmse.csv", _echo(args))
    print(f"best lag {table.lag}: mean RMSE {table.overall():.6g}")
    return EXIT_OK


COMMANDS = {
    "oscillator": cmd_oscillator,
    "moments-check": cmd_moments_check,
    "filter": cmd_filter,
    "estimate-q": cmd_estimate_q,
    "evaluate": cmd_evaluate,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_protect_negative_infinity(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tobitkf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"tobitkf: input error: {exc}", file=sys.stderr)
        return EXIT_DATAERR
    except TobitKFError as exc:
        print(f"tobitkf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
