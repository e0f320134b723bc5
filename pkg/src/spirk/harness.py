"""Experiment drivers: conditioning sweeps, convergence studies, timing grids."""
from __future__ import annotations

import csv
import json
import logging
import os
import statistics
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import SpirkError
from .problems import ProblemSpec, scalar_decay
from .steppers import LinearIVP, integrate
from .tableaux import Scheme, build_tableau
from .transforms import centroskew_split, eigendecompose, w_transform

__all__ = [
    "SCHEMA_VERSION",
    "BenchConfig",
    "BenchRecord",
    "conditioning_rows",
    "run_conditioning_sweep",
    "ConvergenceResult",
    "fit_slope",
    "run_convergence_study",
    "run_bench_grid",
    "emit_report",
    "read_records_csv",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COND_COLUMNS = ("s", "kappa_A_eigvec", "kappa_perturbed_eigvec")


# -- conditioning ------------------------------------------------------------------------


def conditioning_rows(scheme="gauss", s_max=30, s_min=None):
    """``(s, cond2(eigvecs of A), cond2(eigvecs of the perturbed matrix))`` per ``s``.

    The perturbed matrix is the centroskew part for symmetric families and
    the skew-symmetric ``Xhat`` for the others.
    """
    scheme = Scheme.parse(scheme)
    if s_max > 30:
        raise ValueError("conditioning sweep is limited to s <= 30")
    s_min = scheme.min_stages if s_min is None else max(s_min, scheme.min_stages)
    rows = []
    for s in range(s_min, s_max + 1):
        t = build_tableau(scheme, s)
        kA = eigendecompose(t.A).cond2
        try:
            kP = centroskew_split(t).eig.cond2
        except SpirkError:
            kP = w_transform(t).eig.cond2
        rows.append((s, float(kA), float(kP)))
    return rows


def run_conditioning_sweep(scheme="gauss", s_max=30, out=None):
    """Write :func:`conditioning_rows` as CSV to ``out`` (if given); return the rows."""
    rows = conditioning_rows(scheme, s_max)
    if out is not None:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COND_COLUMNS)
            for s, a, b in rows:
                w.writerow((s, repr(a), repr(b)))
    return rows


# -- convergence -------------------------------------------------------------------------


@dataclass
class ConvergenceResult:
    h: list
    errors: list
    slope: float
    fit_points: int

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("h", "error"))
            for h, e in zip(self.h, self.errors):
                w.writerow((repr(h), repr(e)))
            w.writerow(("# slope", repr(self.slope)))


def fit_slope(h, errors, floor=1e-13):
    """Least-squares slope of ``log(error)`` against ``log(h)``.

    Errors at or below ``floor`` are rounding-dominated and excluded.
    """
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    keep = e > floor
    if keep.sum() < 2:
        raise ValueError("fewer than two errors above the rounding floor")
    slope = np.polyfit(np.log(h[keep]), np.log(e[keep]), 1)[0]
    return float(slope), int(keep.sum())


def run_convergence_study(problem=None, scheme="gauss", s=2, h_list=None, reference=None, T=1.0, floor=1e-13, out=None):
    """Global error at ``T`` for each step size in ``h_list``.

    ``problem`` is a callable ``nt -> IVP`` (default: ``y' = -y``).
    ``reference`` is the exact terminal state; when omitted for the default
    problem it is ``exp(-T)``, otherwise a run at a quarter of the smallest
    step serves as reference.
    """
    h_list = [1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64] if h_list is None else list(h_list)
    if problem is None:
        problem = lambda nt: scalar_decay(1.0, T=T, nt=nt)  # noqa: E731
        if reference is None:
            reference = np.array([np.exp(-T)])
    nts = [int(round(T / h)) for h in h_list]
    if reference is None:
        reference = integrate(problem(4 * max(nts)), scheme, s).final
    ref = np.atleast_1d(np.asarray(reference, dtype=float))
    errors = []
    for nt in nts:
        y = integrate(problem(nt), scheme, s).final
        errors.append(float(np.linalg.norm(y - ref) / max(np.linalg.norm(ref), 1.0)))
    hs = [T / nt for nt in nts]
    slope, npts = fit_slope(hs, errors, floor)
    res = ConvergenceResult(hs, errors, slope, npts)
    if out is not None:
        res.to_csv(out)
    return res


# -- benchmark grid ----------------------------------------------------------------------


@dataclass
class BenchConfig:
    problem: ProblemSpec
    schemes: list = field(default_factory=lambda: ["gauss"])
    stage_range: tuple = (2, 4)
    thread_range: tuple = (1, 2)
    nt: int = 5
    repetitions: int = 3
    T: float = None
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.problem, dict):
            self.problem = ProblemSpec(**self.problem)
        self.stage_range = tuple(self.stage_range)
        self.thread_range = tuple(self.thread_range)
        if self.stage_range[0] > self.stage_range[1] or self.thread_range[0] > self.thread_range[1]:
            raise ValueError("stage and thread ranges must be nonempty")
        if self.thread_range[0] < 1:
            raise ValueError("thread counts start at 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    @classmethod
    def from_json(cls, path) -> "BenchConfig":
        with open(path) as fh:
            return cls(**json.load(fh))

    def threads(self):
        lo, hi = self.thread_range
        return list(range(lo, hi + 1))

    def stages(self):
        lo, hi = self.stage_range
        return list(range(lo, hi + 1))


@dataclass
class BenchRecord:
    scheme: str
    s: int
    threads: int
    elapsed_seconds: float = float("nan")
    speedup: float = float("nan")
    krylov_dim_mean: float = float("nan")
    newton_iters_mean: float = float("nan")
    stage_residual_max: float = float("nan")
    status: str = "ok"

    TIMING = ("elapsed_seconds", "speedup")

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]


def _run_cell(cfg: BenchConfig, scheme, s, threads):
    def once():
        p = cfg.problem.build(T=cfg.T, nt=cfg.nt) if cfg.T is not None else cfg.problem.build(nt=cfg.nt)
        t0 = time.perf_counter()
        tr = integrate(p, scheme, s, threads=threads, verify=isinstance(p, LinearIVP))
        return time.perf_counter() - t0, tr

    once()  # warm-up
    times, tr = [], None
    for _ in range(cfg.repetitions):
        dt, tr = once()
        times.append(dt)
    reps = tr.reports
    kd = [d for r in reps for d in r.krylov_dims]
    return BenchRecord(
        scheme=Scheme.parse(scheme).value,
        s=s,
        threads=threads,
        elapsed_seconds=statistics.median(times),
        krylov_dim_mean=float(np.mean(kd)) if kd else 0.0,
        newton_iters_mean=float(np.mean([r.newton_iters for r in reps])),
        stage_residual_max=float(max(r.residual for r in reps)),
    )


def run_bench_grid(cfg: BenchConfig):
    """Run every (scheme, s, threads) cell; failed cells are kept with ``status`` set.

    Returns ``(records, n_failed)``.
    """
    cores = os.cpu_count() or 1
    if cfg.thread_range[1] > cores:
        log.warning("thread cap %d exceeds the %d available cores", cfg.thread_range[1], cores)
    records, failed = [], 0
    for scheme in cfg.schemes:
        for s in cfg.stages():
            row = []
            for k in cfg.threads():
                try:
                    rec = _run_cell(cfg, scheme, s, k)
                except Exception as exc:  # grid continues past a failed cell
                    log.error("cell %s s=%d threads=%d failed: %s", scheme, s, k, exc)
                    rec = BenchRecord(scheme=str(scheme), s=s, threads=k, status=f"error: {exc}")
                    failed += 1
                row.append(rec)
            base = next((r for r in row if r.threads == 1 and r.status == "ok"), None)
            for r in row:
                if base is not None and r.status == "ok":
                    r.speedup = 1.0 if r is base else base.elapsed_seconds / r.elapsed_seconds
            records.extend(row)
    return records, failed


def emit_report(records, out_dir, stem="bench", meta=None):
    """Write ``<stem>.csv`` and ``<stem>.json`` into ``out_dir``; return both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = BenchRecord.columns()
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, c) for c in cols)])
    doc = {
        "schema_version": SCHEMA_VERSION,
        "columns": cols,
        "meta": dict(meta or {}),
        "records": [asdict(r) for r in records],
    }
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=2, allow_nan=True)
    return csv_path, json_path


def read_records_csv(path):
    """Parse a CSV written by :func:`emit_report` back into records."""
    types = {f.name: f.type for f in fields(BenchRecord)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                t = types[k]
                kw[k] = int(v) if t in (int, "int") else float(v) if t in (float, "float") else v
            out.append(BenchRecord(**kw))
    return out
