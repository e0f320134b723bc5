"""Command-line entry point: ``spirk <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, harness, sylvester
from .errors import SpirkError
from .problems import ProblemSpec, heat_1d, laplacian_1d
from .shifted import THREADS_ENV
from .steppers import LinearIVP, integrate
from .tableaux import Scheme, build_tableau, validate_order_conditions, validate_symmetry

log = logging.getLogger("spirk")


def _scheme_arg(text):
    try:
        return Scheme.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _matrix_text(A, digits=16):
    width = digits + 8
    return "\n".join("  ".join(f"{x: .{digits}e}".rjust(width) for x in row) for row in np.atleast_2d(A))


# -- tableau -----------------------------------------------------------------------------


def cmd_tableau(args):
    t = build_tableau(args.scheme, args.stages)
    doc = t.to_dict()
    ok = True
    if args.check:
        sym = validate_symmetry(t)
        order = validate_order_conditions(t)
        doc["check"] = {
            "symmetric": sym.symmetric,
            "symmetry_deviation": sym.max_deviation,
            "order": order.p,
            "quadrature_residual": order.max_quadrature,
            "stage_residual": order.max_stage,
            "order_conditions_hold": order.holds(),
        }
        ok = order.holds()
    if args.json:
        print(json.dumps(doc, indent=2))
    else:
        print(f"{t.name}  s={t.s}  order={t.scheme.order(t.s)}")
        print("A =")
        print(_matrix_text(t.A))
        print("b =")
        print(_matrix_text(t.b))
        print("c =")
        print(_matrix_text(t.c))
        if args.check:
            for k, v in doc["check"].items():
                print(f"{k:>22}: {v}")
    return 0 if ok else 1


# -- cond --------------------------------------------------------------------------------


def cmd_cond(args):
    rows = harness.run_conditioning_sweep(args.scheme, args.max_stages, out=args.out)
    if args.out is None:
        print(",".join(harness.COND_COLUMNS))
        for s, a, b in rows:
            print(f"{s},{a:.6e},{b:.6e}")
    else:
        print(f"wrote {len(rows)} rows to {args.out}")
    return 0


# -- sylvester ---------------------------------------------------------------------------


def _demo_problem(case, tol, seed=0):
    rng = np.random.default_rng(seed)
    if case == "identity":
        N = 8
        return sylvester.SylvesterProblem(np.eye(N), np.zeros((1, 1)), rng.standard_normal((N, 1)), np.ones((1, 1)), applyZinv=np.eye(N), tol=tol)
    if case == "diagonal":
        Z = np.diag([1.0, 2.0, 3.0, 4.0])
        return sylvester.SylvesterProblem(Z, np.eye(1), np.ones((4, 1)), np.ones((1, 1)), applyZinv=np.linalg.inv(Z), tol=tol)
    if case == "random":
        N = 50
        Q = rng.standard_normal((N, N))
        Z = Q @ Q.T / N + np.eye(N)
        t = build_tableau("gauss", 2)
        return sylvester.SylvesterProblem(Z, t.A.T, rng.standard_normal((N, 1)), np.ones((2, 1)), applyZinv=np.linalg.inv(Z), tol=tol)
    if case == "heat":
        N, h = 64, 0.01
        L = laplacian_1d(N, 1.0 / (N + 1)).toarray()
        Z = np.linalg.inv(h * L)
        t = build_tableau("gauss", 4)
        return sylvester.SylvesterProblem(Z, t.A.T, rng.standard_normal((N, 1)), np.ones((4, 1)), applyZinv=h * L, tol=tol)
    raise ValueError(f"unknown demo case {case!r}")


def cmd_sylvester(args):
    p = _demo_problem(args.demo, args.tol)
    sol = sylvester.solve(p, args.variant)
    Zm = sylvester._as_matrix_op(p.applyZ)
    true = sylvester.true_residual(Zm, p.R, p.U, p.V, sol.E)
    scale = np.linalg.norm(p.U) * np.linalg.norm(p.V)
    print(f"case={args.demo} variant={sol.variant} N={p.N} k={p.R.shape[0]} rank={p.rank}")
    print(f"iterations={sol.iterations} space_dim={sol.space_dim} converged={sol.converged}")
    print(f"residual_estimate={sol.residual_estimate / scale:.3e} (relative)")
    print(f"residual_true={true / scale:.3e} (relative)")
    return 0 if sol.converged else 1


# -- solve -------------------------------------------------------------------------------


def _build_from_args(args):
    name = args.problem
    if name == "heat1d":
        return heat_1d(args.N or 64, T=args.T, nt=args.nt)
    params = {"T": args.T, "nt": args.nt}
    if name == "wave":
        params["beta"] = args.beta
        if args.dirichlet:
            params["variant"] = "dirichlet"
        N = args.N or 128
    else:
        N = args.N or 32
    return ProblemSpec(name, N, params).build()


def cmd_solve(args):
    p = _build_from_args(args)
    tr = integrate(p, args.scheme, args.stages, threads=args.threads, verify=args.verify, save_every=max(1, p.nt))
    reps = tr.reports
    doc = {
        "problem": p.name,
        "N": p.N,
        "scheme": args.scheme.value,
        "stages": args.stages,
        "nt": p.nt,
        "h": p.h,
        "T": p.T,
        "threads": args.threads,
        "checksum": tr.checksum(),
        "final_norm": float(np.linalg.norm(tr.final)),
        "final_max": float(np.max(np.abs(tr.final))),
        "newton_iters_total": int(sum(r.newton_iters for r in reps)),
        "max_stage_residual": float(max((r.residual for r in reps), default=0.0)),
        "steps": [r.to_dict() for r in reps],
    }
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2))
    print(f"{p.name} N={p.N} {args.scheme.value} s={args.stages} nt={p.nt}: checksum={doc['checksum']:.15e}")
    if args.verify and isinstance(p, LinearIVP):
        print(f"max stage residual {doc['max_stage_residual']:.3e}")
    return 0


# -- bench -------------------------------------------------------------------------------


def cmd_bench(args):
    cfg = harness.BenchConfig.from_json(args.config)
    records, failed = harness.run_bench_grid(cfg)
    csv_path, json_path = harness.emit_report(records, args.out_dir, meta={"config": str(args.config), "failed": failed})
    print(f"{len(records)} cells, {failed} failed -> {csv_path}, {json_path}")
    return 2 if failed else 0


# -- export ------------------------------------------------------------------------------


def cmd_export(args):
    from .problems import export_matrix_market

    p = _build_from_args(args)
    for path in export_matrix_market(p, args.out_dir):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spirk", description="Stage-parallel implicit Runge-Kutta tools.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tableau", help="print a Butcher tableau")
    p.add_argument("--scheme", type=_scheme_arg, required=True)
    p.add_argument("--stages", type=int, required=True)
    p.add_argument("--check", action="store_true", help="validate symmetry and order conditions")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_tableau)

    p = sub.add_parser("cond", help="eigenvector conditioning sweep (CSV)")
    p.add_argument("--scheme", type=_scheme_arg, default=Scheme.GAUSS)
    p.add_argument("--max-stages", type=int, default=30)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cond)

    p = sub.add_parser("sylvester", help="run a Sylvester solver demo")
    p.add_argument("--demo", choices=["identity", "diagonal", "random", "heat"], default="random")
    p.add_argument("--tol", type=float, default=sylvester.DEFAULT_TOL)
    p.add_argument("--variant", choices=["poly", "extended", "block"], default="poly")
    p.set_defaults(func=cmd_sylvester)

    for name, func, hlp in (("solve", cmd_solve, "integrate a model problem"), ("export", cmd_export, "write problem operators as Matrix Market")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--problem", choices=["heat1d", "heat2d", "wave"], default="heat1d")
        p.add_argument("--N", type=int, default=None, help="spatial resolution")
        p.add_argument("--T", type=float, default=1.0)
        p.add_argument("--nt", type=int, default=10)
        p.add_argument("--beta", type=float, default=10.0)
        p.add_argument("--dirichlet", action="store_true", help="wave: interior-node Dirichlet matrix")
        if name == "solve":
            p.add_argument("--scheme", type=_scheme_arg, default=Scheme.GAUSS)
            p.add_argument("--stages", type=int, default=2)
            p.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or CPU count)")
            p.add_argument("--verify", action="store_true")
            p.add_argument("--out")
        else:
            p.add_argument("--out-dir", default=".")
        p.set_defaults(func=func)

    p = sub.add_parser("bench", help="run a stage x thread timing grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SpirkError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
