"""Block orthogonalization schemes with synchronization telemetry.

Every scheme turns a new block ``V`` into orthonormal columns ``Q_j`` and a
coefficient column block so that ``V = [Q_prev, Q_j] @ R_col``.  Each product
whose result would need a global all-reduce in a distributed run is counted
once on a :class:`SyncCounter`.

Reduce counts per non-first block:

=================  =====================================
BCGS2 + CholQR2    5  (project, CholQR2 x2, project, CholQR)
BCGS2 + HHQR       3 + one per column of the block
BCGS-PIP2          2
two-stage          1, plus 1 per big panel
=================  =====================================
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .dense import (NotPositiveDefinite, cholesky, gram, householder_qr,
                    singular_values, symmetrize_upper, tri_solve_right)


@dataclass
class SyncCounter:
    reduces: int = 0
    by_kind: Counter = field(default_factory=Counter)
    per_block: list = field(default_factory=list)
    per_big_panel: list = field(default_factory=list)

    def begin_block(self) -> None:
        self.per_block.append(0)

    def begin_big_panel(self) -> None:
        self.per_big_panel.append(0)

    def reduce(self, kind: str, count: int = 1, big_panel: bool = False) -> None:
        self.reduces += count
        self.by_kind[kind] += count
        target = self.per_big_panel if big_panel else self.per_block
        if target:
            target[-1] += count

    def as_dict(self) -> dict:
        return {"reduces": self.reduces, "by_kind": dict(self.by_kind),
                "per_block": list(self.per_block), "per_big_panel": list(self.per_big_panel)}


def _count(counter: SyncCounter | None, kind: str, n: int = 1) -> None:
    if counter is not None:
        counter.reduce(kind, n)


class OrthoKind(str, enum.Enum):
    BCGS2_HHQR = "bcgs2-hhqr"
    BCGS2_CHOLQR2 = "bcgs2-cholqr2"
    BCGS_PIP2 = "bcgs-pip2"
    TWO_STAGE = "two-stage"


@dataclass(frozen=True)
class OrthoScheme:
    kind: OrthoKind
    shat: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", OrthoKind(self.kind))
        if self.kind is OrthoKind.TWO_STAGE:
            if self.shat is None or self.shat < 1:
                raise ValueError("two-stage needs a positive second step size shat")
        elif self.shat is not None:
            raise ValueError(f"shat only applies to two-stage, not {self.kind.value}")

    @classmethod
    def parse(cls, name: str, shat: int | None = None) -> "OrthoScheme":
        kind = OrthoKind(name.lower())
        return cls(kind, shat if kind is OrthoKind.TWO_STAGE else None)

    @property
    def name(self) -> str:
        if self.kind is OrthoKind.TWO_STAGE:
            return f"two-stage({self.shat})"
        return self.kind.value


class OrthoBreakdown(np.linalg.LinAlgError):
    """A scheme's Cholesky step failed; its conditioning precondition is violated."""

    def __init__(self, scheme: str, stage: str, block: int, pivot: int,
                 kappa_estimate: float = float("nan")):
        self.scheme = scheme
        self.stage = stage
        self.block = block
        self.pivot = pivot
        self.kappa_estimate = kappa_estimate
        super().__init__(f"{scheme}: Cholesky breakdown during {stage} of block {block} "
                         f"(pivot {pivot}, kappa ~ {kappa_estimate:.3g})")


# -- intra-block -------------------------------------------------------------

def cholqr(V: np.ndarray, counter: SyncCounter | None = None):
    """Cholesky QR: one Gram reduce, Cholesky, TRSM."""
    G = gram(V)
    _count(counter, "gram")
    R = cholesky(G)
    return tri_solve_right(V, R), R


def cholqr2(V: np.ndarray, counter: SyncCounter | None = None):
    """CholQR applied twice, ``R = R2 R1``.

    A single column is just normalized once; a second pass cannot improve a
    vector that already has unit norm to working precision.
    """
    if V.shape[1] == 1:
        return cholqr(V, counter)
    Q1, R1 = cholqr(V, counter)
    Q, R2 = cholqr(Q1, counter)
    return Q, np.triu(R2 @ R1)


def hhqr(V: np.ndarray, counter: SyncCounter | None = None):
    """Householder QR, counted as one reduce per column."""
    _count(counter, "hhqr", V.shape[1])
    return householder_qr(V)


# -- inter-block -------------------------------------------------------------

def bcgs_project(Q_prev: np.ndarray, V: np.ndarray, counter: SyncCounter | None = None):
    """One block classical Gram-Schmidt projection: ``V - Q (Q^T V)``."""
    if Q_prev.shape[1] == 0:
        return np.array(V, dtype=np.float64, order="F"), np.zeros((0, V.shape[1]))
    C = Q_prev.T @ V
    _count(counter, "project")
    return np.asfortranarray(V - Q_prev @ C), C


def _combine(Rp, Rjj, Tp, Tjj):
    # V = Q_prev Rp + Qh Rjj and Qh = Q_prev Tp + Q Tjj
    return np.vstack([Tp @ Rjj + Rp, np.triu(Tjj @ Rjj)])


def bcgs2(Q_prev: np.ndarray, V: np.ndarray, intra: str = "cholqr2",
          counter: SyncCounter | None = None):
    """BCGS twice; the first intra pass is HHQR or CholQR2, the second CholQR."""
    first = {"cholqr2": cholqr2, "hhqr": hhqr}[intra]
    if Q_prev.shape[1] == 0:
        return first(V, counter)
    Vh, Rp = bcgs_project(Q_prev, V, counter)
    Qh, Rjj = first(Vh, counter)
    Qt, Tp = bcgs_project(Q_prev, Qh, counter)
    Q, Tjj = cholqr(Qt, counter)
    return Q, _combine(Rp, Rjj, Tp, Tjj)


def bcgs_pip(Q_prev: np.ndarray, V: np.ndarray, counter: SyncCounter | None = None):
    """BCGS with the Pythagorean inner product: a single fused reduce.

    ``[Q_prev, V]^T V`` gives both the projection coefficients and the Gram
    matrix of ``V``; the Gram matrix of the projected block follows from the
    block Pythagorean identity ``V^T V - Rp^T Rp``.
    """
    k = Q_prev.shape[1]
    G = gram(V)
    if k:
        Rp = Q_prev.T @ V
        _count(counter, "pip")
        Rjj = cholesky(symmetrize_upper(G - Rp.T @ Rp))
        Vh = V - Q_prev @ Rp
    else:
        _count(counter, "pip")
        Rp = np.zeros((0, V.shape[1]))
        Rjj = cholesky(G)
        Vh = V
    return tri_solve_right(Vh, Rjj), np.vstack([Rp, Rjj])


def bcgs_pip2(Q_prev: np.ndarray, V: np.ndarray, counter: SyncCounter | None = None):
    k = Q_prev.shape[1]
    Qh, R = bcgs_pip(Q_prev, V, counter)
    Q, T = bcgs_pip(Q_prev, Qh, counter)
    return Q, _combine(R[:k], R[k:], T[:k], T[k:])


_ONE_STAGE = {
    OrthoKind.BCGS2_HHQR: lambda Qp, V, c: bcgs2(Qp, V, "hhqr", c),
    OrthoKind.BCGS2_CHOLQR2: lambda Qp, V, c: bcgs2(Qp, V, "cholqr2", c),
    OrthoKind.BCGS_PIP2: bcgs_pip2,
}


# -- basis store -------------------------------------------------------------

@dataclass
class BlockInfo:
    start: int
    stop: int
    state: str  # "preprocessed" | "final"


class BasisStore:
    """Accumulated basis ``Q`` with its upper-triangular coefficients ``R``.

    Columns ``[:filled]`` are final (orthonormal); columns
    ``[filled:end]`` are preprocessed blocks of the current two-stage big
    panel.  For one-stage schemes ``filled == end`` after every block.

    ``R`` records how every appended column was produced.  ``R_in`` is the
    same except for columns later used as an MPK start vector, where it holds
    the coordinates of that start vector itself (see :meth:`mark_start`).
    """

    def __init__(self, n: int, capacity: int, scheme: OrthoScheme, s: int,
                 counter: SyncCounter | None = None):
        if scheme.kind is OrthoKind.TWO_STAGE and scheme.shat % s:
            raise ValueError(f"shat={scheme.shat} must be a multiple of s={s}")
        self.n = n
        self.capacity = capacity
        self.scheme = scheme
        self.s = s
        self.big_panel_blocks = scheme.shat // s if scheme.kind is OrthoKind.TWO_STAGE else 1
        self.Q = np.zeros((n, capacity), order="F")
        self.R = np.zeros((capacity, capacity), order="F")
        self.R_in = np.zeros((capacity, capacity), order="F")
        self.counter = counter if counter is not None else SyncCounter()
        self.reset()

    def reset(self) -> None:
        self.filled = 0
        self.end = 0
        self.pending = 0
        self.blocks: list[BlockInfo] = []
        self.R[...] = 0.0
        self.R_in[...] = 0.0

    @property
    def two_stage(self) -> bool:
        return self.scheme.kind is OrthoKind.TWO_STAGE

    @property
    def final(self) -> np.ndarray:
        return self.Q[:, :self.filled]

    @property
    def basis(self) -> np.ndarray:
        return self.Q[:, :self.end]

    @property
    def last_column(self) -> np.ndarray:
        """Next MPK start: the newest column, preprocessed or final."""
        return self.Q[:, self.end - 1]

    def mark_start(self, col: int) -> None:
        """Record that column ``col`` (in current coordinates) feeds the next MPK."""
        self.R_in[:, col] = 0.0
        self.R_in[col, col] = 1.0

    def _write(self, Qj: np.ndarray, Rcol: np.ndarray, state: str) -> None:
        lo, c = self.end, Qj.shape[1]
        hi = lo + c
        if hi > self.capacity:
            raise ValueError(f"basis capacity {self.capacity} exceeded")
        self.Q[:, lo:hi] = Qj
        self.R[:hi, lo:hi] = Rcol
        self.R_in[:hi, lo:hi] = Rcol
        self.end = hi
        self.blocks.append(BlockInfo(lo, hi, state))

    def _breakdown(self, exc: NotPositiveDefinite, stage: str, V: np.ndarray) -> OrthoBreakdown:
        try:
            kappa = singular_values(V).cond
        except ValueError:
            kappa = float("nan")
        return OrthoBreakdown(self.scheme.name, stage, len(self.blocks) + 1, exc.pivot, kappa)

    def append_block(self, V: np.ndarray) -> bool:
        """Orthogonalize ``V`` into the store; True when new final columns exist."""
        self.counter.begin_block()
        if self.two_stage:
            two_stage_preprocess(self, V)
            if self.pending == self.big_panel_blocks:
                two_stage_finalize(self)
                return True
            return False
        try:
            Qj, Rcol = _ONE_STAGE[self.scheme.kind](self.final, V, self.counter)
        except NotPositiveDefinite as exc:
            raise self._breakdown(exc, "orthogonalize", V) from exc
        self._write(Qj, Rcol, "final")
        self.filled = self.end
        return True

    def finish(self) -> bool:
        """Finalize a partially filled big panel (end of a restart cycle)."""
        if self.two_stage and self.pending:
            two_stage_finalize(self)
            return True
        return False


def two_stage_preprocess(store: BasisStore, V: np.ndarray) -> np.ndarray:
    """First stage: one BCGS-PIP of ``V`` against final plus preprocessed columns."""
    if store.pending >= store.big_panel_blocks:
        raise ValueError("current big panel is already full")
    if store.pending == 0:
        store.counter.begin_big_panel()
    try:
        Qh, Rcol = bcgs_pip(store.basis, V, store.counter)
    except NotPositiveDefinite as exc:
        raise store._breakdown(exc, "preprocess", V) from exc
    store._write(Qh, Rcol, "preprocessed")
    store.pending += 1
    return Qh


def two_stage_finalize(store: BasisStore) -> np.ndarray:
    """Second stage: BCGS-PIP of the whole preprocessed big panel against the final prefix."""
    f, e = store.filled, store.end
    if e == f:
        raise ValueError("no preprocessed columns to finalize")
    store.counter.reduce("pip", big_panel=True)
    try:
        Q, T = bcgs_pip(store.final, store.Q[:, f:e], None)
    except NotPositiveDefinite as exc:
        raise store._breakdown(exc, "finalize", store.Q[:, f:e]) from exc
    Tp, Th = T[:f], T[f:]
    for M in (store.R, store.R_in):
        Mp = M[:f, f:e].copy()
        Mh = M[f:e, f:e].copy()
        M[:f, f:e] = Tp @ Mh + Mp
        M[f:e, f:e] = np.triu(Th @ Mh)
    store.Q[:, f:e] = Q
    for b in store.blocks:
        if b.state == "preprocessed":
            b.state = "final"
    store.filled = e
    store.pending = 0
    return Q
