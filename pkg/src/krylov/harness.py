"""Experiment drivers: orthogonalization sweeps, glued and MPK traces, solves.

Every driver returns a list of flat ``dict`` rows.  Each row carries the full
parameter tuple and seed, so a single line of output is enough to re-run the
point that produced it.
"""
from __future__ import annotations

import csv
import json
import math
from typing import IO, Iterable

import numpy as np

from . import matgen
from .dense import NotPositiveDefinite, ortho_error, singular_values
from .ortho import (BasisStore, OrthoBreakdown, OrthoKind, OrthoScheme, SyncCounter,
                    bcgs_pip, cholqr, two_stage_finalize, two_stage_preprocess)
from .solver import SolverConfig, mpk_monomial, sstep_gmres, standard_gmres
from .sparse import CsrMatrix, equilibrate, read_matrix_market

SCHEMA_VERSION = 1
NAN = float("nan")


def kappa_grid(kappa_min: float = 1e1, kappa_max: float = 1e15) -> list[float]:
    """Decade steps from ``kappa_min`` to ``kappa_max`` inclusive."""
    if not 1 <= kappa_min <= kappa_max:
        raise ValueError("need 1 <= kappa_min <= kappa_max")
    lo, hi = math.log10(kappa_min), math.log10(kappa_max)
    return [10.0 ** e for e in np.arange(round(lo), round(hi) + 1)]


def _cond(V: np.ndarray) -> float:
    return singular_values(V).cond


def _safe_ortho(Q: np.ndarray) -> float:
    return ortho_error(Q) if np.all(np.isfinite(Q)) else NAN


# -- ortho sweep --------------------------------------------------------------

def _cholqr2_point(V: np.ndarray) -> dict:
    counter = SyncCounter()
    out = {"first_error": NAN, "intermediate_kappa": NAN, "final_error": NAN,
           "breakdown": False, "breakdown_stage": ""}
    try:
        Q1, _ = cholqr(V, counter)
    except NotPositiveDefinite:
        return {**out, "breakdown": True, "breakdown_stage": "first", "reduces": counter.reduces}
    out["first_error"] = _safe_ortho(Q1)
    out["intermediate_kappa"] = _cond(Q1)
    try:
        Q, _ = cholqr(Q1, counter)
    except NotPositiveDefinite:
        return {**out, "breakdown": True, "breakdown_stage": "second", "reduces": counter.reduces}
    out["final_error"] = _safe_ortho(Q)
    return {**out, "reduces": counter.reduces}


def _pip2_point(V: np.ndarray, s: int) -> dict:
    # one-stage BCGS-PIP2, panel by panel; the intermediate basis at panel j
    # is [Q_1..Q_{j-1}, Qhat_j]
    counter = SyncCounter()
    n, total = V.shape
    Q = np.zeros((n, total), order="F")
    first_err = inter_kappa = 0.0
    for j in range(total // s):
        lo, hi = j * s, (j + 1) * s
        stage = "first"
        try:
            Qh, _ = bcgs_pip(Q[:, :lo], V[:, lo:hi], counter)
            Ws = np.hstack([Q[:, :lo], Qh])
            first_err = max(first_err, _safe_ortho(Ws))
            inter_kappa = max(inter_kappa, _cond(Ws))
            stage = "second"
            Q[:, lo:hi], _ = bcgs_pip(Q[:, :lo], Qh, counter)
        except NotPositiveDefinite:
            return {"first_error": first_err if stage == "second" else NAN,
                    "intermediate_kappa": inter_kappa if stage == "second" else NAN,
                    "final_error": NAN, "breakdown": True,
                    "breakdown_stage": f"{stage}:panel{j + 1}", "reduces": counter.reduces}
    return {"first_error": first_err, "intermediate_kappa": inter_kappa,
            "final_error": _safe_ortho(Q), "breakdown": False, "breakdown_stage": "",
            "reduces": counter.reduces}


def ortho_sweep(scheme: str = "cholqr2", n: int = 100_000, k: int = 5,
                kappas: Iterable[float] | None = None, seeds: Iterable[int] = range(10),
                panels: int = 4, s: int = 5) -> list[dict]:
    """One row per (kappa, seed).

    ``cholqr2`` runs on logscaled ``n x k`` matrices.  ``bcgs-pip2`` runs on
    glued matrices of ``panels`` blocks of ``s`` columns whose panels and
    whole matrix share the target condition number (growth 1).
    """
    kappas = list(kappa_grid() if kappas is None else kappas)
    if kappas != sorted(kappas):
        raise ValueError("kappa grid must be ascending")
    seeds = list(seeds)
    rows = []
    for kappa in kappas:
        for seed in seeds:
            if scheme == "cholqr2":
                V = matgen.gen_logscaled(n, k, kappa, seed).matrix
                params = {"n": n, "k": k, "panels": 1, "s": k}
                point = _cholqr2_point(V)
            elif scheme == "bcgs-pip2":
                V = matgen.gen_glued(n, panels, s, kappa, growth=1.0, seed=seed).matrix
                params = {"n": n, "k": panels * s, "panels": panels, "s": s}
                point = _pip2_point(V, s)
            else:
                raise ValueError(f"ortho sweep supports cholqr2 or bcgs-pip2, not {scheme!r}")
            rows.append({"schema": SCHEMA_VERSION, "experiment": "ortho-sweep",
                         "scheme": scheme, **params, "kappa": kappa, "seed": seed,
                         "measured_kappa": _cond(V), **point})
    return rows


def summarize_sweep(rows: list[dict]) -> list[dict]:
    """Min/avg/max over seeds per kappa; breakdown seeds only counted."""
    out = []
    for kappa in sorted({r["kappa"] for r in rows}):
        group = [r for r in rows if r["kappa"] == kappa]
        base = {key: group[0][key] for key in ("schema", "experiment", "scheme", "n", "k",
                                                "panels", "s")}
        summary = {**base, "kappa": kappa, "seeds": len(group),
                   "breakdowns": sum(bool(r["breakdown"]) for r in group)}
        for metric in ("measured_kappa", "first_error", "intermediate_kappa", "final_error"):
            vals = np.array([r[metric] for r in group], dtype=float)
            vals = vals[np.isfinite(vals)]
            for name, fn in (("min", np.min), ("avg", np.mean), ("max", np.max)):
                summary[f"{metric}_{name}"] = float(fn(vals)) if vals.size else NAN
        out.append(summary)
    return out


# -- glued trace (two-stage on a fixed matrix) --------------------------------

def glued_trace(n: int = 100_000, m: int = 180, s: int = 5, shat: int = 60,
                kappa_panel: float = 1e7, growth: float = 2.0, seed: int = 0,
                coupling: float = 0.1) -> list[dict]:
    """Feed the panels of a glued matrix through the two-stage scheme.

    Per block: condition number of the raw prefix, of the final basis joined
    with the raw columns of the current big panel, and of the final basis
    joined with the preprocessed columns; at every big-panel boundary the
    orthogonality error of the final basis.
    """
    if m % s or shat % s:
        raise ValueError("s must divide m and shat")
    panel = matgen.gen_glued(n, m // s, s, kappa_panel, growth, coupling, seed)
    V = panel.matrix
    store = BasisStore(n, m, OrthoScheme(OrthoKind.TWO_STAGE, shat), s)
    params = {"schema": SCHEMA_VERSION, "experiment": "glued-trace", "n": n, "m": m, "s": s,
              "shat": shat, "kappa_panel": kappa_panel, "growth": growth,
              "coupling": coupling, "seed": seed}
    rows = []
    for j in range(m // s):
        lo, hi = j * s, (j + 1) * s
        f = store.filled
        row = {**params, "block": j + 1, "columns": hi,
               "target_kappa": growth ** j * kappa_panel,
               "raw_prefix_kappa": _cond(V[:, :hi]),
               "raw_panel_kappa": _cond(np.hstack([store.final, V[:, f:hi]])),
               "preprocessed_kappa": NAN, "ortho_error": NAN, "big_panel_end": False,
               "breakdown": False, "breakdown_stage": ""}
        store.counter.begin_block()
        try:
            two_stage_preprocess(store, V[:, lo:hi])
            row["preprocessed_kappa"] = _cond(store.basis)
            if store.pending == store.big_panel_blocks or j == m // s - 1:
                two_stage_finalize(store)
                row["big_panel_end"] = True
                row["ortho_error"] = ortho_error(store.final)
        except OrthoBreakdown as exc:
            row.update(breakdown=True, breakdown_stage=exc.stage)
            row["reduces"] = store.counter.reduces
            rows.append(row)
            break
        row["reduces"] = store.counter.reduces
        rows.append(row)
    return rows


# -- MPK trace ------------------------------------------------------------------

def mpk_trace(A: CsrMatrix, m: int = 60, s: int = 5, shat: int = 60, source: str = "",
              do_equilibrate: bool = True, seed: int | None = None) -> list[dict]:
    """One restart cycle of MPK + two-stage on ``A`` (equilibrated by default).

    The start vector is the normalized all-ones vector, or a seeded Gaussian
    when ``seed`` is given.
    """
    if do_equilibrate:
        A = equilibrate(A)
    if seed is None:
        v = np.ones(A.n)
    else:
        v = matgen.box_muller(matgen.philox(seed), A.n)
    v /= np.linalg.norm(v)
    store = BasisStore(A.n, m + 1, OrthoScheme(OrthoKind.TWO_STAGE, shat), s)
    params = {"schema": SCHEMA_VERSION, "experiment": "mpk-trace", "source": source,
              "n": A.n, "nnz": A.nnz, "m": m, "s": s, "shat": shat,
              "equilibrated": do_equilibrate, "seed": -1 if seed is None else seed}
    rows = []
    for j in range(m // s):
        if j == 0:
            block = mpk_monomial(A, v, s)
        else:
            start = store.end - 1
            store.mark_start(start)
            block = mpk_monomial(A, store.Q[:, start], s)[:, 1:]
        row = {**params, "block": j + 1, "columns": store.end + block.shape[1],
               "mpk_kappa": _cond(block), "preprocessed_kappa": NAN, "ortho_error": NAN,
               "big_panel_end": False, "breakdown": False, "breakdown_stage": ""}
        try:
            finalized = store.append_block(block)
            if j == m // s - 1:
                finalized = store.finish() or finalized
            row["preprocessed_kappa"] = _cond(store.basis)
            if finalized:
                row["big_panel_end"] = True
                row["ortho_error"] = ortho_error(store.final)
        except OrthoBreakdown as exc:
            row.update(breakdown=True, breakdown_stage=exc.stage)
            row["reduces"] = store.counter.reduces
            rows.append(row)
            break
        row["reduces"] = store.counter.reduces
        rows.append(row)
    return rows


# -- solves ---------------------------------------------------------------------

def matrix_from_source(matrix: str | None = None, grid: int | None = None, stencil: int = 5,
                       identity: int | None = None) -> tuple[CsrMatrix, str]:
    """Build the operator named by exactly one of the source options."""
    given = [x is not None for x in (matrix, grid, identity)]
    if sum(given) != 1:
        raise ValueError("give exactly one of matrix, grid, identity")
    if matrix is not None:
        return read_matrix_market(matrix), str(matrix)
    if grid is not None:
        return matgen.gen_laplace2d(grid, grid, stencil), f"laplace2d-{stencil}pt-{grid}x{grid}"
    return CsrMatrix.identity(identity), f"identity-{identity}"


def solve(A: CsrMatrix, scheme: str = "bcgs-pip2", m: int = 60, s: int = 5,
          shat: int | None = None, tol: float = 1e-6, max_iters: int = 100_000):
    """One solve with ``b = A 1``; ``scheme="gmres"`` selects standard GMRES."""
    b = matgen.gen_rhs_ones(A)
    if scheme == "gmres":
        config = SolverConfig(m=m, s=1, rel_tol=tol, max_iters=max_iters)
        return standard_gmres(A, b, None, config)
    if scheme == "two-stage":
        orth = OrthoScheme(OrthoKind.TWO_STAGE, m if shat is None else shat)
    else:
        orth = OrthoScheme.parse(scheme)
    config = SolverConfig(m=m, s=s, scheme=orth, rel_tol=tol, max_iters=max_iters)
    return sstep_gmres(A, b, None, config)


def solve_record(report, source: str, tol: float) -> dict:
    d = report.to_dict()
    d.update(schema=SCHEMA_VERSION, experiment="solve", source=source, tol=tol,
             error_inf=float(np.max(np.abs(report.x - 1.0))))
    return d


def history_rows(report, source: str, tol: float) -> list[dict]:
    base = {"schema": SCHEMA_VERSION, "experiment": "solve-history", "source": source,
            "scheme": report.scheme, "m": report.m, "s": report.s, "shat": report.shat,
            "tol": tol}
    implicit = [NAN] + list(report.implicit_history)
    return [{**base, "cycle": i, "rel_residual": r, "implicit_rel_residual": g}
            for i, (r, g) in enumerate(zip(report.history, implicit))]


# -- output -----------------------------------------------------------------------

def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


def write_csv(rows: list[dict], stream: IO[str]) -> None:
    if not rows:
        return
    columns = list(rows[0])
    for r in rows[1:]:
        columns += [c for c in r if c not in columns]
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([format_value(r.get(c, "")) for c in columns])


def write_json(record: dict, stream: IO[str]) -> None:
    json.dump(record, stream, indent=2, sort_keys=True, default=_json_default)
    stream.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")

