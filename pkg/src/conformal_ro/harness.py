"""Seeded simulation grid comparing uncertainty sets.

Every grid cell (alpha, n, d, distribution, scenario) is replicated
``reps`` times.  A replication draws training and test data, builds each
uncertainty set from the training rows only, solves the robust problem,
and records the test-set coverage of the set together with the
``(1 - alpha)`` order statistic of the realized test costs.

Each replication seeds its own generator from ``(base_seed, cell, rep)``,
so results do not depend on scheduling or on which other cells run.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Callable, Iterable, Iterator, TextIO

import numpy as np

from .conformal import order_statistic_index
from .errors import ConformalROError, MalformedCsv, NotConvergedWarning
from .numerics import Rng, derive_seed
from .robust import solve_nominal, solve_robust
from .sampling import DEFAULT_NU, Dist, Scenario, ScenarioKind, sample_scenario
from .uncertainty import Ellipsoid, build_conformal_set, build_normality_set, build_point_set

__all__ = [
    "Cell",
    "ExperimentConfig",
    "ExperimentRecord",
    "METHODS",
    "RESULT_COLUMNS",
    "SUMMARY_COLUMNS",
    "build_uncertainty_set",
    "cell_seed",
    "generate_cell_data",
    "iter_grid",
    "read_records",
    "run_cell",
    "run_grid",
    "summarize",
    "worst_case_quantile",
    "write_records",
    "write_summary",
]

METHODS = ("None", "Normality", "Conformal")
RESULT_COLUMNS = (
    "alpha", "n", "d", "dist", "scenario", "method", "rep", "seed_used", "status",
    "coverage", "worst_case_cost", "radius", "solve_iterations",
)
SUMMARY_COLUMNS = (
    "alpha", "n", "d", "dist", "scenario", "method", "reps_ok", "reps_failed",
    "coverage_mean", "coverage_median", "coverage_q1", "coverage_q3",
    "cost_mean", "cost_median", "cost_q1", "cost_q3", "radius_mean",
)
NA = "NA"

STREAM_TRAIN = 0
STREAM_TEST = 1
STREAM_SPLIT = 2


@dataclass(frozen=True)
class Cell:
    alpha: float
    n: int
    d: int
    dist: str
    scenario: str

    def key(self) -> str:
        return f"alpha={self.alpha!r}|n={self.n}|d={self.d}|dist={self.dist}|scenario={self.scenario}"


@dataclass
class ExperimentConfig:
    alphas: tuple = (0.05, 0.1, 0.25, 0.5)
    ns: tuple = (100, 250, 1000, 2500)
    dims: tuple = (2, 10)
    dists: tuple = ("Normal", "StudentT")
    scenarios: tuple = ("IID", "IndependentHeteroscedastic", "Correlated")
    methods: tuple = METHODS
    reps: int = 100
    test_size: int = 250
    base_seed: int = 0
    split_ratio: float = 0.5
    nu: float = DEFAULT_NU
    ridge: float = 0.0
    tol: float = 1e-9
    max_iter: int = 100_000

    def __post_init__(self):
        for name in ("alphas", "ns", "dims", "dists", "scenarios", "methods"):
            setattr(self, name, tuple(getattr(self, name)))
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if any(not 0.0 < a < 1.0 for a in self.alphas):
            raise ValueError("alphas must lie in (0, 1)")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        for dist in self.dists:
            Dist(dist)
        for sc in self.scenarios:
            ScenarioKind(sc)
        if self.reps < 1 or self.test_size < 1:
            raise ValueError("reps and test_size must be positive")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must lie in (0, 1)")
        if "StudentT" in self.dists and not self.nu > 2:
            raise ValueError("nu must exceed 2")

    def cells(self) -> list[Cell]:
        """Grid cells in canonical order, whatever order the config lists them in.

        Numeric axes ascend; dists and scenarios follow their declaration order.
        """
        dists = [x.value for x in Dist if x.value in self.dists]
        scenarios = [x.value for x in ScenarioKind if x.value in self.scenarios]
        return [
            Cell(a, n, d, dist, sc)
            for a in sorted({float(a) for a in self.alphas})
            for n in sorted({int(n) for n in self.ns})
            for d in sorted({int(d) for d in self.dims})
            for dist in dists for sc in scenarios
        ]

    @property
    def method_order(self) -> tuple:
        return tuple(m for m in METHODS if m in self.methods)

    @property
    def n_records(self) -> int:
        return len(self.cells()) * len(self.method_order) * self.reps


@dataclass
class ExperimentRecord:
    alpha: float
    n: int
    d: int
    dist: str
    scenario: str
    method: str
    rep: int
    seed_used: int
    status: str = "ok"
    coverage: float | None = None
    worst_case_cost: float | None = None
    radius: float | None = None
    solve_iterations: int | None = None


def cell_seed(base_seed: int, cell: Cell, rep: int) -> int:
    digest = hashlib.blake2b(cell.key().encode(), digest_size=8).digest()
    return derive_seed(base_seed, int.from_bytes(digest, "little"), rep)


def generate_cell_data(cell: Cell, seed_used: int, test_size: int, nu: float = DEFAULT_NU):
    """Training and test samples for one replication."""
    scenario = Scenario(ScenarioKind(cell.scenario), Dist(cell.dist), cell.d, nu)
    train = sample_scenario(scenario, cell.n, Rng(seed_used, STREAM_TRAIN))
    test = sample_scenario(scenario, test_size, Rng(seed_used, STREAM_TEST))
    return train, test


def build_uncertainty_set(method: str, train, alpha: float, rng: Rng,
                          split_ratio: float = 0.5, ridge: float = 0.0) -> Ellipsoid:
    if method == "None":
        return build_point_set(train)
    if method == "Normality":
        return build_normality_set(train, alpha, ridge=ridge)
    if method == "Conformal":
        return build_conformal_set(train, alpha, split_ratio, rng, ridge=ridge)
    raise ValueError(f"unknown method {method!r}")


def worst_case_quantile(costs, alpha: float) -> float:
    """The ``ceil((1 - alpha) m)``-th smallest of ``m`` realized costs."""
    costs = np.sort(np.asarray(costs, dtype=float))
    k = order_statistic_index(costs.size, 1.0 - alpha)
    return float(costs[max(k, 1) - 1])


def run_cell(cell: Cell, rep: int, base_seed: int, config: ExperimentConfig | None = None) -> list[ExperimentRecord]:
    """All method records for one replication of one cell."""
    config = config or ExperimentConfig()
    seed = cell_seed(base_seed, cell, rep)
    train, test = generate_cell_data(cell, seed, config.test_size, config.nu)
    train.setflags(write=False)
    out = []
    for method in config.method_order:
        rec = ExperimentRecord(cell.alpha, cell.n, cell.d, cell.dist, cell.scenario, method, rep, seed)
        try:
            uset = build_uncertainty_set(method, train, cell.alpha, Rng(seed, STREAM_SPLIT),
                                         config.split_ratio, config.ridge)
            if method == "None":
                sol = solve_nominal(uset.center)
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", NotConvergedWarning)
                    sol = solve_robust(uset, tol=config.tol, max_iter=config.max_iter)
                rec.coverage = float(np.mean(uset.contains(test)))
                if not sol.converged:
                    rec.status = "not_converged"
            rec.worst_case_cost = worst_case_quantile(test @ sol.z, cell.alpha)
            rec.radius = float(uset.radius)
            rec.solve_iterations = int(sol.iterations)
        except ConformalROError as exc:
            rec.status = type(exc).__name__
        out.append(rec)
    return out


def _run_task(args):
    cell, rep, base_seed, config = args
    return run_cell(cell, rep, base_seed, config)


def iter_grid(config: ExperimentConfig, jobs: int = 1,
              progress: Callable[[int, int], None] | None = None) -> Iterator[ExperimentRecord]:
    """Yield records in grid order (cell, then rep, then method).

    The order is fixed by the config alone, whatever ``jobs`` is.
    """
    tasks = [(cell, rep, config.base_seed, config) for cell in config.cells() for rep in range(config.reps)]
    total = len(tasks)
    if jobs <= 1:
        results: Iterable = map(_run_task, tasks)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=jobs)
        results = pool.map(_run_task, tasks, chunksize=max(1, total // (jobs * 8)))
    try:
        for done, recs in enumerate(results, start=1):
            yield from recs
            if progress is not None:
                progress(done, total)
    finally:
        if pool is not None:
            pool.shutdown(wait=False, cancel_futures=True)


def run_grid(config: ExperimentConfig, jobs: int = 1) -> list[ExperimentRecord]:
    return list(iter_grid(config, jobs))


def _fmt(v) -> str:
    if v is None:
        return NA
    if isinstance(v, float):
        if math.isnan(v):
            return NA
        return format(v, ".17g")
    return str(v)


class RecordWriter:
    """Streams records as CSV with the fixed column order."""

    def __init__(self, fh: TextIO):
        self._w = csv.writer(fh, lineterminator="\n")
        self._w.writerow(RESULT_COLUMNS)

    def write(self, rec: ExperimentRecord):
        row = asdict(rec)
        self._w.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])


def write_records(records: Iterable[ExperimentRecord], fh: TextIO):
    w = RecordWriter(fh)
    for rec in records:
        w.write(rec)


def records_to_csv(records: Iterable[ExperimentRecord]) -> str:
    buf = io.StringIO()
    write_records(records, buf)
    return buf.getvalue()


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentRecord)}


def _parse(value: str, kind: str, lineno: int, col: str):
    if value == NA:
        if kind.startswith(("float |", "int |")):
            return None
        raise MalformedCsv(f"line {lineno}: column {col} may not be NA")
    try:
        if kind.startswith("float"):
            return float(value)
        if kind.startswith("int"):
            return int(value)
    except ValueError:
        raise MalformedCsv(f"line {lineno}: column {col} has unparsable value {value!r}") from None
    return value


def read_records(fh: TextIO) -> list[ExperimentRecord]:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedCsv("line 1: empty input, expected a header row") from None
    if tuple(header) != RESULT_COLUMNS:
        raise MalformedCsv(f"line 1: expected header {','.join(RESULT_COLUMNS)}, got {','.join(header)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(RESULT_COLUMNS):
            raise MalformedCsv(f"line {lineno}: expected {len(RESULT_COLUMNS)} fields, got {len(row)}")
        vals = {c: _parse(v, _FIELD_TYPES[c], lineno, c) for c, v in zip(RESULT_COLUMNS, row)}
        out.append(ExperimentRecord(**vals))
    return out


def _quartiles(values):
    if not values:
        return None, None, None, None
    arr = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return float(arr.mean()), float(med), float(q1), float(q3)


def summarize(records: Iterable[ExperimentRecord]) -> list[dict]:
    """Per (cell, method) box-plot statistics of coverage and cost.

    Failed replications are counted but excluded from the statistics.
    Groups appear in order of first occurrence.
    """
    groups: dict[tuple, list[ExperimentRecord]] = {}
    for rec in records:
        key = (rec.alpha, rec.n, rec.d, rec.dist, rec.scenario, rec.method)
        groups.setdefault(key, []).append(rec)
    rows = []
    for key, recs in groups.items():
        good = [r for r in recs if r.status in ("ok", "not_converged")]
        cov = _quartiles([r.coverage for r in good if r.coverage is not None])
        cost = _quartiles([r.worst_case_cost for r in good if r.worst_case_cost is not None])
        radii = [r.radius for r in good if r.radius is not None]
        row = dict(zip(SUMMARY_COLUMNS[:6], key))
        row.update(
            reps_ok=len(good), reps_failed=len(recs) - len(good),
            coverage_mean=cov[0], coverage_median=cov[1], coverage_q1=cov[2], coverage_q3=cov[3],
            cost_mean=cost[0], cost_median=cost[1], cost_q1=cost[2], cost_q3=cost[3],
            radius_mean=float(np.mean(radii)) if radii else None,
        )
        rows.append(row)
    return rows


def write_summary(rows: Iterable[dict], fh: TextIO):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
