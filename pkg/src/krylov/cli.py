"""``krylov`` command line: gen, ortho-sweep, glued-trace, mpk-trace, solve.

Set ``KRYLOV_NUM_THREADS`` to cap the BLAS thread pool.  Breakdowns are part
of the output, not errors; the exit status is nonzero only for bad arguments
(2) or unreadable/unwritable files (1).
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import harness, matgen
from .sparse import CsrMatrix, MatrixMarketError, write_matrix_market

THREADS_ENV = "KRYLOV_NUM_THREADS"
SCHEMES = ["gmres", "bcgs2-cholqr2", "bcgs2-hhqr", "bcgs-pip2", "two-stage"]


@contextlib.contextmanager
def _open_out(path: str | None):
    if path in (None, "-"):
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            yield fh


def _seeds(args) -> list[int]:
    return list(range(args.seed0, args.seed0 + args.seeds))


def _add_source(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--matrix", help="Matrix Market file")
    src.add_argument("--grid", type=int, help="2-D Laplace on a GRID x GRID mesh")
    src.add_argument("--identity", type=int, metavar="N", help="N x N identity")
    p.add_argument("--stencil", type=int, choices=[5, 9], default=5)


def _add_krylov(p, m=60, shat=None):
    p.add_argument("--m", type=int, default=m, help="restart length / basis size")
    p.add_argument("--s", type=int, default=5, help="step size")
    p.add_argument("--shat", type=int, default=shat, help="second step size (default m)")


def cmd_gen(args) -> int:
    out = Path(args.out)
    if args.kind in ("logscaled", "glued"):
        if args.kind == "logscaled":
            panel = matgen.gen_logscaled(args.n, args.k, args.kappa, args.seed)
        else:
            panel = matgen.gen_glued(args.n, args.panels, args.s, args.kappa, args.growth,
                                     args.coupling, args.seed)
        path = out.with_suffix(".npy")
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, panel.matrix)
        sidecar = {"schema": harness.SCHEMA_VERSION, "file": path.name, **panel.sidecar()}
    else:
        if args.kind == "laplace2d":
            A = matgen.gen_laplace2d(args.grid, args.grid, args.stencil)
            params = {"grid": args.grid, "stencil": args.stencil}
        elif args.kind == "laplace3d":
            A = matgen.gen_laplace3d(args.grid, args.grid, args.grid)
            params = {"grid": args.grid, "stencil": 7}
        else:
            A = CsrMatrix.identity(args.n)
            params = {}
        path = out.with_suffix(".mtx")
        path.parent.mkdir(parents=True, exist_ok=True)
        write_matrix_market(A, str(path), comment=f" generated {args.kind}")
        sidecar = {"schema": harness.SCHEMA_VERSION, "file": path.name, "kind": args.kind,
                   "n": A.n, "nnz": A.nnz, **params}
    with open(out.with_suffix(".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_ortho_sweep(args) -> int:
    rows = harness.ortho_sweep(args.scheme, args.n, args.k,
                               harness.kappa_grid(args.kappa_min, args.kappa_max),
                               _seeds(args), args.panels, args.s)
    with _open_out(args.out) as fh:
        harness.write_csv(rows, fh)
    if args.summary:
        with _open_out(args.summary) as fh:
            harness.write_csv(harness.summarize_sweep(rows), fh)
    return 0


def cmd_glued_trace(args) -> int:
    rows = []
    for seed in _seeds(args):
        rows += harness.glued_trace(args.n, args.m, args.s, args.shat or args.m,
                                    args.kappa_panel, args.growth, seed, args.coupling)
    with _open_out(args.out) as fh:
        harness.write_csv(rows, fh)
    return 0


def cmd_mpk_trace(args) -> int:
    A, source = harness.matrix_from_source(args.matrix, args.grid, args.stencil, args.identity)
    rows = harness.mpk_trace(A, args.m, args.s, args.shat or args.m, source,
                             not args.no_equilibrate, args.seed)
    with _open_out(args.out) as fh:
        harness.write_csv(rows, fh)
    return 0


def cmd_solve(args) -> int:
    A, source = harness.matrix_from_source(args.matrix, args.grid, args.stencil, args.identity)
    report = harness.solve(A, args.scheme, args.m, args.s, args.shat, args.tol, args.max_iters)
    with _open_out(args.out) as fh:
        harness.write_json(harness.solve_record(report, source, args.tol), fh)
    if args.history:
        with _open_out(args.history) as fh:
            harness.write_csv(harness.history_rows(report, source, args.tol), fh)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="krylov", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a generated matrix plus a JSON sidecar")
    p.add_argument("--kind", required=True,
                   choices=["logscaled", "glued", "laplace2d", "laplace3d", "identity"])
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--s", type=int, default=5)
    p.add_argument("--panels", type=int, default=36)
    p.add_argument("--kappa", type=float, default=1e7)
    p.add_argument("--growth", type=float, default=2.0)
    p.add_argument("--coupling", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--stencil", type=int, choices=[5, 9], default=5)
    p.add_argument("--out", required=True, help="output path; suffix is replaced")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ortho-sweep", help="CholQR2 or BCGS-PIP2 over a kappa grid")
    p.add_argument("--scheme", choices=["cholqr2", "bcgs-pip2"], default="cholqr2")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--k", type=int, default=5, help="columns (cholqr2)")
    p.add_argument("--s", type=int, default=5, help="panel width (bcgs-pip2)")
    p.add_argument("--panels", type=int, default=4, help="panel count (bcgs-pip2)")
    p.add_argument("--kappa-min", type=float, default=1e1)
    p.add_argument("--kappa-max", type=float, default=1e15)
    p.add_argument("--seeds", type=int, default=10, help="number of seeds")
    p.add_argument("--seed0", type=int, default=0, help="first seed")
    p.add_argument("--out", default="-")
    p.add_argument("--summary", help="CSV of min/avg/max per kappa")
    p.set_defaults(func=cmd_ortho_sweep)

    p = sub.add_parser("glued-trace", help="two-stage scheme on a glued matrix")
    p.add_argument("--n", type=int, default=100_000)
    _add_krylov(p, m=180, shat=60)
    p.add_argument("--kappa-panel", type=float, default=1e7)
    p.add_argument("--growth", type=float, default=2.0)
    p.add_argument("--coupling", type=float, default=0.1)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed0", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_glued_trace)

    p = sub.add_parser("mpk-trace", help="MPK + two-stage on a sparse operator")
    _add_source(p)
    _add_krylov(p)
    p.add_argument("--no-equilibrate", action="store_true")
    p.add_argument("--seed", type=int, help="random start vector instead of ones")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_mpk_trace)

    p = sub.add_parser("solve", help="one GMRES solve with b = A * ones")
    _add_source(p)
    _add_krylov(p)
    p.add_argument("--scheme", choices=SCHEMES, default="bcgs-pip2")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=100_000)
    p.add_argument("--out", default="-", help="JSON report")
    p.add_argument("--history", help="CSV of per-cycle residuals")
    p.set_defaults(func=cmd_solve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get(THREADS_ENV)
    limits = None
    if threads:
        try:
            limits = int(threads)
        except ValueError:
            parser.error(f"{THREADS_ENV} must be an integer, got {threads!r}")
    try:
        with threadpool_limits(limits=limits):
            return args.func(args)
    except (OSError, MatrixMarketError) as exc:
        print(f"krylov: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"krylov: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
