"""Command-line front end.

Subcommands::

    toy          reproduce the two-dimensional worked example and self-check it
    region       split-conformal ellipse or full-conformal lattice from a CSV
    solve        robust allocation against a chosen uncertainty set
    experiment   run the simulation grid and write results + summary CSVs
    summarize    aggregate an existing results CSV

Exit codes: 0 success, 1 input or configuration error, 2 self-check failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .conformal import GridSpec, full_conformal_region, split_calibrate
from .errors import ConformalROError, MalformedCsv
from .harness import (
    ExperimentConfig,
    RecordWriter,
    iter_grid,
    read_records,
    summarize,
    write_summary,
)
from .linalg import cholesky
from .numerics import Rng
from .robust import solve_nominal, solve_robust, worst_case
from .uncertainty import (
    Ellipsoid,
    build_conformal_set,
    build_normality_set,
    build_point_set,
    ellipsoid_csv_header,
    ellipsoid_from_calibration,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SELFCHECK = 2

TOY_CORRELATION = 0.5
TOY_OMEGA = 2.0
TOY_TOLERANCE = 0.01
TOY_REFERENCES = (
    ((0.1, 0.9), (1.15, 1.99)),
    ((0.9, 0.1), (1.99, 1.15)),
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _err(msg: str):
    print(f"error: {msg}", file=sys.stderr)


def _f(x: float) -> str:
    return format(float(x), ".17g")


def _vec(v, digits: int = 6) -> str:
    return "(" + ", ".join(f"{x:.{digits}f}" for x in v) + ")"


# -- input -----------------------------------------------------------------

def read_dataset(path: str) -> np.ndarray:
    """Read an observation CSV with header ``u1,...,ud``."""
    try:
        fh = sys.stdin if path == "-" else open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise MalformedCsv(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MalformedCsv(f"{path}: line 1: file is empty, expected header u1,...,ud")
        header = [h.strip() for h in header]
        expected = [f"u{k + 1}" for k in range(len(header))]
        if header != expected:
            raise MalformedCsv(
                f"{path}: line 1: expected header {','.join(expected)}, got {','.join(header)!r}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedCsv(f"{path}: line {lineno}: expected {len(header)} values, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise MalformedCsv(f"{path}: line {lineno}: non-numeric value in {','.join(row)!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise MalformedCsv(f"{path}: line {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise MalformedCsv(f"{path}: no observations after the header")
    return np.array(rows, dtype=float)


def _open_out(path: str | None):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


def _seed_or_default(args) -> int:
    if args.seed is None:
        print("warning: no --seed given, using seed 0", file=sys.stderr)
        return 0
    return args.seed


# -- config file -------------------------------------------------------------

_LIST_KEYS = {"alphas": float, "ns": int, "dims": int, "dists": str, "scenarios": str, "methods": str}
_SCALAR_KEYS = {"reps": int, "test_size": int, "split_ratio": float, "nu": float,
                "ridge": float, "tol": float, "max_iter": int}
CONFIG_KEYS = {**_LIST_KEYS, **_SCALAR_KEYS}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value, f"{source}:{lineno}")
    return out


def _convert(key: str, value: str, where: str):
    try:
        if key in _LIST_KEYS:
            items = [v.strip() for v in value.split(",") if v.strip()]
            if not items:
                raise ValueError("empty list")
            return tuple(_LIST_KEYS[key](v) for v in items)
        return _SCALAR_KEYS[key](value)
    except ValueError as exc:
        raise UsageError(f"{where}: bad value for {key}: {value!r} ({exc})") from None


def build_experiment_config(file_values: dict, flag_values: dict, seed: int) -> ExperimentConfig:
    """Merge built-in defaults, config file, then flags (highest precedence)."""
    merged = {**file_values, **{k: v for k, v in flag_values.items() if v is not None}}
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(merged) - known
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        return ExperimentConfig(**merged, base_seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- commands ----------------------------------------------------------------

def toy_instance() -> Ellipsoid:
    cov = np.array([[1.0, TOY_CORRELATION], [TOY_CORRELATION, 1.0]])
    return Ellipsoid(center=np.zeros(2), chol=cholesky(cov), radius=TOY_OMEGA)


def cmd_toy(args) -> int:
    s = toy_instance()
    sol = solve_robust(s)
    ok = True
    out = [
        "toy robust allocation: mean (0, 0), unit variances, "
        f"correlation {TOY_CORRELATION}, omega {TOY_OMEGA}",
    ]

    def check(label, got, ref, tol):
        nonlocal ok
        good = bool(np.max(np.abs(np.asarray(got) - np.asarray(ref))) <= tol)
        ok &= good
        out.append(f"{label:<28} {_vec(got)}  reference {_vec(ref, 2)}  {'ok' if good else 'MISMATCH'}")

    check("optimal z*", sol.z, (0.5, 0.5), 1e-6)
    check("worst-case u at z*", sol.worst_u, (1.73, 1.73), TOY_TOLERANCE)
    out.append(f"{'worst-case cost at z*':<28} {sol.value:.6f}")
    for z, ref in TOY_REFERENCES:
        u, value = worst_case(s, z)
        check(f"worst-case u at z={_vec(z, 1)}", u, ref, TOY_TOLERANCE)
        out.append(f"{'worst-case cost':<28} {value:.6f}")
    out.append(f"self-check: {'passed' if ok else 'FAILED'}")
    print("\n".join(out))
    return EXIT_OK if ok else EXIT_SELFCHECK


def cmd_region(args) -> int:
    data = read_dataset(args.input)
    seed = _seed_or_default(args)
    fh, close = _open_out(args.output)
    try:
        w = csv.writer(fh, lineterminator="\n")
        if args.method == "split":
            cal = split_calibrate(data, args.alpha, args.split_ratio, Rng(seed), ridge=args.ridge)
            ell = ellipsoid_from_calibration(cal)
            w.writerow(ellipsoid_csv_header(ell.dim))
            w.writerow([_f(v) for v in ell.to_csv_row()])
        else:
            if data.shape[1] != 2:
                raise UsageError(f"full conformal regions need d = 2, input has d = {data.shape[1]}")
            grid = _grid_from_args(args, data)
            region = full_conformal_region(data, args.alpha, grid)
            w.writerow(["u1", "u2", "pi", "boundary"])
            for p, cnt in zip(region.points[region.memberships], region.counts[region.memberships]):
                w.writerow([_f(p[0]), _f(p[1]), _f(cnt / (region.n + 1)), int(cnt == region.threshold)])
    finally:
        if close:
            fh.close()
    return EXIT_OK


def _grid_from_args(args, data) -> GridSpec:
    if args.grid_step is not None and not args.grid_step > 0:
        raise UsageError(f"--grid-step must be positive, got {args.grid_step}")
    if args.grid_points is not None and args.grid_points < 2:
        raise UsageError("--grid-points must be at least 2")
    if args.grid_bounds is not None:
        try:
            lo1, hi1, lo2, hi2 = (float(v) for v in args.grid_bounds.split(","))
        except ValueError:
            raise UsageError("--grid-bounds takes four numbers: u1min,u1max,u2min,u2max") from None
        mins, maxs = (lo1, lo2), (hi1, hi2)
    else:
        cover = GridSpec.covering(data, num=args.grid_points or 101)
        mins, maxs = cover.mins, cover.maxs
    if args.grid_step is not None:
        steps = (args.grid_step, args.grid_step)
    else:
        num = args.grid_points or 101
        steps = tuple((hi - lo) / (num - 1) for lo, hi in zip(mins, maxs))
    try:
        return GridSpec(tuple(mins), tuple(maxs), steps, max_points=args.max_points)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_solve(args) -> int:
    data = read_dataset(args.input)
    if args.set == "none":
        s = build_point_set(data)
        sol = solve_nominal(s.center)
    else:
        if args.set == "normal":
            s = build_normality_set(data, args.alpha, ridge=args.ridge)
        else:
            seed = _seed_or_default(args)
            s = build_conformal_set(data, args.alpha, args.split_ratio, Rng(seed), ridge=args.ridge)
        sol = solve_robust(s, tol=args.tol, max_iter=args.max_iter)
    d = s.dim
    header = ["set", "alpha", "radius", "value", "iterations", "converged",
              *(f"z{k + 1}" for k in range(d)), *(f"worst_u{k + 1}" for k in range(d))]
    row = [args.set, _f(args.alpha), _f(s.radius), _f(sol.value), sol.iterations, int(sol.converged),
           *(_f(v) for v in sol.z), *(_f(v) for v in sol.worst_u)]
    fh, close = _open_out(args.output)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerow(row)
    finally:
        if close:
            fh.close()
    if close:
        print(f"z* = {_vec(sol.z)}  value = {sol.value:.6f}  radius = {s.radius:.6f}  "
              f"iterations = {sol.iterations}", file=sys.stderr)
    return EXIT_OK


def _progress(done: int, total: int):
    step = max(1, total // 20)
    if done == total or done % step == 0:
        print(f"[experiment] {done}/{total} replications", file=sys.stderr, flush=True)


def cmd_experiment(args) -> int:
    if args.seed is None:
        raise UsageError("experiment requires --seed for reproducibility")
    file_values = {}
    if args.config is not None:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
        file_values = parse_config_text(text, args.config)
    flags = {}
    for key in CONFIG_KEYS:
        raw = getattr(args, key, None)
        if raw is not None:
            flags[key] = _convert(key, raw, f"--{key.replace('_', '-')}")
    config = build_experiment_config(file_values, flags, args.seed)
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    out_path = Path(args.output)
    summary_path = Path(args.summary) if args.summary else out_path.with_name(out_path.stem + "_summary.csv")
    print(f"[experiment] {len(config.cells())} cells x {config.reps} reps x {len(config.method_order)} methods "
          f"= {config.n_records} records, jobs={args.jobs}", file=sys.stderr)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = RecordWriter(fh)
        try:
            for rec in iter_grid(config, args.jobs, progress=_progress):
                writer.write(rec)
        except KeyboardInterrupt:
            fh.flush()
            _err(f"interrupted; partial results kept in {out_path}")
            return EXIT_INPUT
    with open(out_path, newline="", encoding="utf-8") as fh:
        records = read_records(fh)
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        write_summary(summarize(records), fh)
    print(f"[experiment] wrote {out_path} and {summary_path}", file=sys.stderr)
    return EXIT_OK


def cmd_summarize(args) -> int:
    fh = sys.stdin if args.input == "-" else open(args.input, newline="", encoding="utf-8")
    with fh:
        records = read_records(fh)
    out, close = _open_out(args.output)
    try:
        write_summary(summarize(records), out)
    finally:
        if close:
            out.close()
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _alpha(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {text}")
    return v


def _ratio(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"split ratio must lie in (0, 1), got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="conformal-ro", description="Conformal uncertainty sets for robust optimization.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("toy", help="reproduce the 2-d worked example and self-check it")
    t.set_defaults(func=cmd_toy)

    def common(sp):
        sp.add_argument("input", help="observation CSV with header u1,...,ud ('-' for stdin)")
        sp.add_argument("--alpha", type=_alpha, default=0.1, help="target miscoverage (default 0.1)")
        sp.add_argument("--seed", type=int, default=None, help="seed for the fold split (default 0, with a warning)")
        sp.add_argument("--split-ratio", type=_ratio, default=0.5, help="fraction of rows in the fitting fold")
        sp.add_argument("--ridge", type=float, default=0.0, help="add RIDGE * I to covariance estimates (default off)")
        sp.add_argument("-o", "--output", default=None, help="output CSV (default stdout)")

    r = sub.add_parser("region", help="conformal prediction region from data")
    common(r)
    r.add_argument("--method", choices=("split", "full"), default="split")
    r.add_argument("--grid-step", type=float, default=None, help="lattice spacing for --method full")
    r.add_argument("--grid-points", type=int, default=None, help="points per axis when no step is given (default 101)")
    r.add_argument("--grid-bounds", default=None, help="u1min,u1max,u2min,u2max (default: data range +/- 3 sd)")
    r.add_argument("--max-points", type=int, default=1_000_000, help="lattice point budget")
    r.set_defaults(func=cmd_region)

    s = sub.add_parser("solve", help="robust allocation over the simplex")
    common(s)
    s.add_argument("--set", choices=("none", "normal", "conformal"), default="conformal")
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--max-iter", type=int, default=100_000)
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("experiment", help="run the simulation grid")
    e.add_argument("--config", default=None, help="key = value config file")
    e.add_argument("-o", "--output", required=True, help="results CSV path")
    e.add_argument("--summary", default=None, help="summary CSV path (default <output>_summary.csv)")
    e.add_argument("--jobs", type=int, default=1, help="worker processes")
    e.add_argument("--seed", type=int, default=None, help="base seed (required)")
    for key in CONFIG_KEYS:
        e.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                       help="overrides the config file" + (" (comma-separated)" if key in _LIST_KEYS else ""))
    e.set_defaults(func=cmd_experiment)

    m = sub.add_parser("summarize", help="aggregate a results CSV")
    m.add_argument("input", help="results CSV ('-' for stdin)")
    m.add_argument("-o", "--output", default=None)
    m.set_defaults(func=cmd_summarize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head)
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_INPUT
    except (UsageError, ConformalROError, OSError) as exc:
        _err(str(exc))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
