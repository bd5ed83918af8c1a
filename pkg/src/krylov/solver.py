"""Restarted s-step GMRES with a monomial matrix-powers kernel.

Each restart cycle builds up to ``m + 1`` basis vectors in blocks of ``s``
new Krylov vectors.  Block ``j`` starts the matrix-powers kernel from the
newest basis column (final for one-stage schemes, preprocessed for the
two-stage scheme) and hands the ``s`` new vectors to the block
orthogonalization scheme.  The Hessenberg matrix is recovered from the
triangular factors as ``H = R T R_in^{-1}`` and the small least-squares
problem is solved with Givens rotations.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dense import SingularFactor, tri_solve_right
from .ortho import BasisStore, OrthoBreakdown, OrthoKind, OrthoScheme, SyncCounter
from .sparse import CsrMatrix, spmv

log = logging.getLogger(__name__)

# a new basis column whose diagonal coefficient is this small relative to the
# norm of its coefficient column is treated as numerically dependent
DEPENDENCE_TOL = 1e-12


class HessenbergBreakdown(SingularFactor):
    pass


class SolverError(RuntimeError):
    pass


class MaxItersExceeded(SolverError):
    pass


class StagnationDetected(SolverError):
    pass


class SolveBreakdown(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    m: int = 60
    s: int = 5
    scheme: OrthoScheme = OrthoScheme(OrthoKind.BCGS2_CHOLQR2)
    rel_tol: float = 1e-6
    max_iters: int = 100_000

    def __post_init__(self):
        if self.m < 1 or self.s < 1 or self.m % self.s:
            raise ValueError(f"s={self.s} must divide m={self.m}")
        if self.scheme.kind is OrthoKind.TWO_STAGE:
            shat = self.scheme.shat
            if not (self.s <= shat <= self.m) or shat % self.s:
                raise ValueError(f"need s <= shat <= m with s | shat, got shat={shat}")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")

    @property
    def shat(self) -> int:
        return self.scheme.shat if self.scheme.kind is OrthoKind.TWO_STAGE else self.s


@dataclass
class SolveReport:
    x: np.ndarray = field(repr=False)
    scheme: str
    m: int
    s: int
    shat: int
    status: str
    iterations: int
    cycles: int
    rel_residual: float
    history: list
    implicit_history: list
    sync: dict
    breakdown: bool = False
    breakdown_info: str | None = None
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def restarts(self) -> int:
        return max(self.cycles - 1, 0)

    @property
    def reduces(self) -> int:
        return self.sync["reduces"]

    @property
    def reduces_per_iteration(self) -> float:
        return self.reduces / self.iterations if self.iterations else 0.0

    def raise_for_status(self) -> "SolveReport":
        exc = {"max_iters": MaxItersExceeded, "stagnation": StagnationDetected,
               "breakdown": SolveBreakdown}.get(self.status)
        if exc is not None:
            raise exc(self.breakdown_info or self.status)
        return self

    def to_dict(self) -> dict:
        d = {k: v for k, v in dataclasses.asdict(self).items() if k != "x"}
        d.update(converged=self.converged, restarts=self.restarts,
                 reduces=self.reduces, reduces_per_iteration=self.reduces_per_iteration)
        return d


def _matvec(A):
    if isinstance(A, CsrMatrix):
        return lambda v: spmv(A, v)
    return lambda v: np.asarray(A @ v, dtype=np.float64).ravel()


def mpk_monomial(A, v_start: np.ndarray, s: int) -> np.ndarray:
    """``[v, A v, ..., A^s v]`` as an n x (s+1) column-major block."""
    apply = _matvec(A)
    v_start = np.asarray(v_start, dtype=np.float64)
    if not np.linalg.norm(v_start) > 0:
        raise ValueError("MPK start vector must be nonzero")
    V = np.empty((v_start.shape[0], s + 1), order="F")
    V[:, 0] = v_start
    for k in range(s):
        V[:, k + 1] = apply(V[:, k])
    return V


def monomial_change_of_basis(m: int) -> np.ndarray:
    """(m+1) x m matrix with ones on the first subdiagonal."""
    T = np.zeros((m + 1, m))
    T[np.arange(1, m + 1), np.arange(m)] = 1.0
    return T


def assemble_hessenberg(R: np.ndarray, T: np.ndarray, m: int,
                        R_in: np.ndarray | None = None) -> np.ndarray:
    """``H = R T R_in^{-1}``, an (m+1) x m upper Hessenberg matrix.

    ``R`` holds the coordinates of the matrix-powers outputs and ``R_in``
    those of the vectors fed to ``A``; they differ only in columns used as
    block start vectors.  With ``R_in`` omitted both are taken from ``R``.
    """
    R_out = np.asarray(R)[:m + 1, :m + 1]
    R_in = R_out if R_in is None else np.asarray(R_in)
    X = R_out @ T[:m + 1, :m]
    try:
        H = tri_solve_right(X, R_in[:m, :m])
    except SingularFactor as exc:
        raise HessenbergBreakdown(str(exc)) from exc
    low = np.tril(H, -2)
    if np.any(low):
        scale = np.linalg.norm(H)
        if np.max(np.abs(low)) > 1e-13 * scale:
            log.warning("Hessenberg fill below subdiagonal: %.3g", np.max(np.abs(low)) / scale)
        H = np.triu(H, -1)
    return H


def solve_hessenberg_lsq(H: np.ndarray, gamma: float) -> tuple[np.ndarray, float]:
    """Minimize ``||gamma e_1 - H y||`` by Givens QR; returns ``(y, residual)``."""
    H = np.array(H, dtype=np.float64)
    rows, k = H.shape
    if rows != k + 1:
        raise ValueError(f"expected a (k+1) x k Hessenberg matrix, got {H.shape}")
    g = np.zeros(k + 1)
    g[0] = gamma
    for j in range(k):
        a, b = H[j, j], H[j + 1, j]
        r = np.hypot(a, b)
        if r == 0.0:
            raise HessenbergBreakdown(f"zero column {j + 1} in Hessenberg matrix")
        c, s = a / r, b / r
        Hj = H[j, j:].copy()
        H[j, j:] = c * Hj + s * H[j + 1, j:]
        H[j + 1, j:] = -s * Hj + c * H[j + 1, j:]
        H[j + 1, j] = 0.0
        g[j], g[j + 1] = c * g[j] + s * g[j + 1], -s * g[j] + c * g[j + 1]
    U = H[:k]
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - U[i, i + 1:] @ y[i + 1:]) / U[i, i]
    return y, abs(g[k])


class _Cycle:
    """One restart cycle's basis plus the bookkeeping for lucky breakdowns."""

    def __init__(self, n: int, config: SolverConfig, counter: SyncCounter):
        self.config = config
        self.store = BasisStore(n, config.m + 1, config.scheme, config.s, counter)
        self.T = monomial_change_of_basis(config.m)
        self.extra = None  # (column, coords) of a dependent MPK output
        self.limit = None  # first numerically dependent final column

    def reset(self):
        self.store.reset()
        self.extra = None
        self.limit = None

    @property
    def k(self) -> int:
        """Number of usable Arnoldi columns (inputs with known outputs)."""
        if self.extra is not None:
            return self.extra[0]
        if self.limit is not None:
            return self.limit
        return max(self.store.filled - 1, 0)

    def _check_dependence(self, lo: int, hi: int) -> bool:
        R = self.store.R
        for i in range(max(lo, 1), hi):
            if R[i, i] <= DEPENDENCE_TOL * np.linalg.norm(R[:i + 1, i]):
                self.limit = i
                return True
        return False

    def hessenberg(self) -> np.ndarray:
        R = self.store.R
        if self.extra is not None:
            R = R.copy()
            col, coords = self.extra
            R[:col + 1, col] = coords
        return assemble_hessenberg(R, self.T, self.k, self.store.R_in)

    def least_squares(self, gamma: float):
        if self.k == 0:
            return np.zeros(0), gamma
        return solve_hessenberg_lsq(self.hessenberg(), gamma)

    def run(self, A, v1: np.ndarray, gamma: float = 1.0, target: float = -1.0,
            budget: int | None = None):
        """Build the basis block by block; returns ``(implicit, breakdown)``.

        Stops early once the implicit residual of a finalized prefix drops to
        ``target`` or ``budget`` Arnoldi columns exist.
        """
        m, s = self.config.m, self.config.s
        store = self.store
        implicit = gamma
        for j in range(m // s):
            if j == 0:
                block = mpk_monomial(A, v1, s)
            else:
                start = store.end - 1
                store.mark_start(start)
                block = mpk_monomial(A, store.Q[:, start], s)[:, 1:]
            lo = store.filled
            try:
                finalized = store.append_block(block)
                if j == m // s - 1:
                    finalized = store.finish() or finalized
            except OrthoBreakdown as exc:
                self.salvage(block, exc, first=(j == 0))
                return implicit, exc
            if finalized:
                dependent = self._check_dependence(lo, store.filled)
                _, implicit = self.least_squares(gamma)
                if dependent or implicit <= target or (budget is not None and self.k >= budget):
                    break
        return implicit, None

    def salvage(self, V: np.ndarray, exc: OrthoBreakdown, first: bool) -> None:
        """Keep the columns of a failed block that precede the failing pivot.

        The failing column becomes an output-only vector: its coordinates in
        the final basis plus the norm of what is left after projection.
        """
        store = self.store
        if exc.stage == "finalize":
            store.end = store.filled
            store.pending = 0
            return
        keep = exc.pivot - 1
        while keep > 0:
            try:
                store.append_block(V[:, :keep])
                store.finish()
                break
            except OrthoBreakdown as again:
                keep = min(keep - 1, again.pivot - 1)
        if keep == 0:
            if first:
                return
            try:
                store.finish()
            except OrthoBreakdown:
                store.end = store.filled
                store.pending = 0
        z = V[:, keep]
        Q = store.final
        c1 = Q.T @ z
        w = z - Q @ c1
        c2 = Q.T @ w
        w -= Q @ c2
        coords = np.append(c1 + c2, np.linalg.norm(w))
        self.extra = (store.filled, coords)


@dataclass
class ArnoldiCycle:
    Q: np.ndarray = field(repr=False)
    H: np.ndarray = field(repr=False)
    k: int
    sync: dict
    breakdown: str | None = None


def arnoldi_cycle(A, v_start, config: SolverConfig | None = None) -> ArnoldiCycle:
    """One full restart cycle from ``v_start``: ``A Q[:, :k] ~ Q[:, :k+1] H``."""
    config = config or SolverConfig()
    v = np.asarray(v_start, dtype=np.float64)
    counter = SyncCounter()
    cycle = _Cycle(v.shape[0], config, counter)
    _, broke = cycle.run(A, v / np.linalg.norm(v))
    k = cycle.k
    H = cycle.hessenberg() if k else np.zeros((1, 0))
    return ArnoldiCycle(cycle.store.Q[:, :k + 1].copy(), H, k, counter.as_dict(),
                        None if broke is None else str(broke))


def sstep_gmres(A, b, x0=None, config: SolverConfig | None = None) -> SolveReport:
    """Solve ``A x = b`` with restarted s-step GMRES.

    Failure modes are reported through ``SolveReport.status`` (``max_iters``,
    ``stagnation``, ``breakdown``); call :meth:`SolveReport.raise_for_status`
    to turn them into exceptions.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    apply = _matvec(A)
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError("x0 and b must have the same length")
    m, s = config.m, config.s

    counter = SyncCounter()
    cycle = _Cycle(n, config, counter)
    r = b - apply(x)
    gamma = float(np.linalg.norm(r))
    r0 = gamma
    history = [1.0]
    implicit_history = []
    iterations = cycles = 0
    status, info = "running", None
    stalled = 0

    if r0 == 0.0:
        status = "converged"
    target = config.rel_tol * r0

    while status == "running":
        cycle.reset()
        cycles += 1
        implicit, broke = cycle.run(A, r / gamma, gamma, target, config.max_iters - iterations)
        if broke is not None:
            log.info("cycle %d: %s", cycles, broke)

        k = cycle.k
        if k:
            try:
                y, implicit = cycle.least_squares(gamma)
            except HessenbergBreakdown as exc:
                broke = broke or exc
                y = None
            if y is not None:
                x += cycle.store.Q[:, :k] @ y
        implicit_history.append(implicit / r0)
        iterations += k
        r = b - apply(x)
        new_gamma = float(np.linalg.norm(r))
        history.append(new_gamma / r0)
        stalled = stalled + 1 if new_gamma > 0.99 * gamma else 0
        gamma = new_gamma

        if gamma <= target:
            status = "converged"
        elif broke is not None:
            status, info = "breakdown", str(broke)
        elif iterations >= config.max_iters:
            status = "max_iters"
        elif stalled >= 2:
            status = "stagnation"
        elif gamma == 0.0:
            status = "converged"

    return SolveReport(
        x=x, scheme=config.scheme.name, m=m, s=s, shat=config.shat, status=status,
        iterations=iterations, cycles=cycles, rel_residual=gamma / r0 if r0 else 0.0,
        history=history, implicit_history=implicit_history, sync=counter.as_dict(),
        breakdown=status == "breakdown", breakdown_info=info,
        wall_time=time.perf_counter() - t0)


def standard_gmres(A, b, x0=None, config: SolverConfig | None = None) -> SolveReport:
    """GMRES with CGS2 orthogonalization: the s = 1 case of :func:`sstep_gmres`."""
    config = config or SolverConfig()
    config = dataclasses.replace(config, s=1, scheme=OrthoScheme(OrthoKind.BCGS2_CHOLQR2))
    report = sstep_gmres(A, b, x0, config)
    report.scheme = "gmres-cgs2"
    return report
