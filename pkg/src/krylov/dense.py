"""Dense kernels for tall-skinny blocks and the small square factors they produce.

Matrices are plain :class:`numpy.ndarray` objects of dtype float64.  Blocks
that live inside a basis are stored column-major (Fortran order) so that a
panel of consecutive columns is a contiguous view.

The spectral oracle (:func:`singular_values`, :func:`ortho_error`) is built on
Jacobi iterations rather than on eigenvalues of a Gram matrix, because forming
``V^T V`` squares the condition number and wipes out exactly the small
singular values these experiments need to see.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import blas

EPS = float(np.finfo(np.float64).eps)

JACOBI_TOL = 1e-15
JACOBI_MAX_SWEEPS = 30
ORACLE_MAX_COLS = 512


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Cholesky hit a non-positive pivot.

    ``pivot`` is the 1-based index of the offending pivot.
    """

    def __init__(self, pivot: int, value: float = float("nan")):
        self.pivot = pivot
        self.value = value
        super().__init__(f"non-positive pivot {value!r} at index {pivot}")


class SingularFactor(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SpectralSummary:
    singular_values: np.ndarray
    cond: float
    converged: bool = True
    sweeps: int = 0


def as_dense(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 Fortran-ordered array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return np.asfortranarray(arr)


def symmetrize_upper(G: np.ndarray) -> np.ndarray:
    """Mirror the upper triangle of ``G`` onto the lower one (bitwise symmetric)."""
    G = np.triu(G)
    return G + np.triu(G, 1).T


def gram(V: np.ndarray) -> np.ndarray:
    """``V^T V``, symmetric to the last bit."""
    V = np.asarray(V, dtype=np.float64)
    if V.size == 0:
        raise ValueError("gram of an empty block")
    return symmetrize_upper(V.T @ V)


def mat_mul(A: np.ndarray, B: np.ndarray, trans_a: bool = False,
            trans_b: bool = False) -> np.ndarray:
    """``op(A) @ op(B)`` with explicit dimension checking."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    opA = A.T if trans_a else A
    opB = B.T if trans_b else B
    if opA.shape[1] != opB.shape[0]:
        raise ValueError(f"dimension mismatch: {opA.shape} @ {opB.shape}")
    return opA @ opB


def cholesky(S: np.ndarray) -> np.ndarray:
    """Upper-triangular ``R`` with ``R^T R = S``.

    No shift or regularization: a pivot that is not strictly positive raises
    :class:`NotPositiveDefinite` so callers can see the breakdown.
    """
    S = np.asarray(S, dtype=np.float64)
    k = S.shape[0]
    if S.ndim != 2 or S.shape[1] != k:
        raise ValueError(f"cholesky needs a square matrix, got {S.shape}")
    R = np.zeros((k, k), order="F")
    for j in range(k):
        col = R[:j, j]
        d = S[j, j] - col @ col
        if not d > 0.0:
            raise NotPositiveDefinite(j + 1, float(d))
        rjj = np.sqrt(d)
        R[j, j] = rjj
        if j + 1 < k:
            R[j, j + 1:] = (S[j, j + 1:] - col @ R[:j, j + 1:]) / rjj
    return R


def tri_solve_right(V: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``V R^{-1}`` for upper-triangular ``R`` (a right-side TRSM)."""
    R = np.asarray(R, dtype=np.float64)
    d = np.diag(R)
    if np.any(d == 0.0):
        raise SingularFactor(f"zero diagonal entry at index {int(np.argmin(np.abs(d))) + 1}")
    V = np.asfortranarray(V, dtype=np.float64)
    if V.shape[1] != R.shape[0]:
        raise ValueError(f"dimension mismatch: {V.shape} / {R.shape}")
    # side=1: right; lower=0: upper.  overwrite_b=0 keeps V intact.
    return blas.dtrsm(1.0, np.asfortranarray(R), V, side=1, lower=0)


def householder_qr(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin Householder QR with the sign convention ``diag(R) >= 0``."""
    V = np.asarray(V, dtype=np.float64)
    if V.shape[0] < V.shape[1]:
        raise ValueError("householder_qr needs rows >= cols")
    Q, R = np.linalg.qr(V, mode="reduced")
    sign = np.where(np.diag(R) < 0.0, -1.0, 1.0)
    Q = np.asfortranarray(Q * sign)
    R = np.triu(R * sign[:, None])
    return Q, R


@njit(cache=True)
def _hestenes(a, tol, max_sweeps):
    # one-sided Jacobi, cyclic by column pairs; rotates columns of `a` in place
    rows, k = a.shape
    for sweep in range(1, max_sweeps + 1):
        worst = 0.0
        for p in range(k - 1):
            for q in range(p + 1, k):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(rows):
                    x = a[i, p]
                    y = a[i, q]
                    alpha += x * x
                    beta += y * y
                    gamma += x * y
                if alpha == 0.0 or beta == 0.0 or gamma == 0.0:
                    continue
                c = abs(gamma) / np.sqrt(alpha) / np.sqrt(beta)
                if c > worst:
                    worst = c
                if c <= tol:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                else:
                    t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                    if zeta == 0.0:
                        t = 1.0
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                for i in range(rows):
                    x = a[i, p]
                    y = a[i, q]
                    a[i, p] = cs * x - sn * y
                    a[i, q] = sn * x + cs * y
        if worst <= tol:
            return sweep, True
    return max_sweeps, False


@njit(cache=True)
def _sym_jacobi(a, max_sweeps):
    # cyclic two-sided Jacobi on a symmetric matrix, in place; returns sweeps
    k = a.shape[0]
    fro = 0.0
    for i in range(k):
        for j in range(k):
            fro += a[i, j] * a[i, j]
    fro = np.sqrt(fro)
    if fro == 0.0:
        return 0, True
    thresh = 1e-18 * fro
    for sweep in range(1, max_sweeps + 1):
        off = 0.0
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = a[p, q]
                if abs(apq) > off:
                    off = abs(apq)
                if abs(apq) <= thresh:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                    if theta == 0.0:
                        t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for i in range(k):
                    aip = a[i, p]
                    aiq = a[i, q]
                    a[i, p] = c * aip - s * aiq
                    a[i, q] = s * aip + c * aiq
                for i in range(k):
                    api = a[p, i]
                    aqi = a[q, i]
                    a[p, i] = c * api - s * aqi
                    a[q, i] = s * api + c * aqi
                a[p, q] = 0.0
                a[q, p] = 0.0
        if off <= thresh:
            return sweep, True
    return max_sweeps, False


def singular_values(V: np.ndarray) -> SpectralSummary:
    """Singular values by one-sided Jacobi.

    Tall inputs are first reduced by Householder QR; the column-wise backward
    stability of Householder keeps column scaling intact, so Jacobi on ``R``
    retains the relative accuracy that matters for graded panels.
    """
    V = np.asarray(V, dtype=np.float64)
    rows, cols = V.shape
    if rows < cols:
        raise ValueError("singular_values needs rows >= cols")
    if cols > ORACLE_MAX_COLS:
        raise ValueError(f"oracle limited to {ORACLE_MAX_COLS} columns")
    if rows > 2 * cols:
        work = np.linalg.qr(V, mode="r")
    else:
        work = V.copy()
    work = np.ascontiguousarray(work)
    sweeps, ok = _hestenes(work, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    sigma = np.sort(np.sqrt(np.einsum("ij,ij->j", work, work)))[::-1]
    smax, smin = sigma[0], sigma[-1]
    if smax == 0.0:
        cond = float("inf")
    else:
        cond = float(smax / smin) if smin > 0.0 else float("inf")
    return SpectralSummary(sigma, cond, bool(ok), int(sweeps))


def cond(V: np.ndarray) -> float:
    return singular_values(V).cond


def sym_eigenvalues(S: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi, ascending."""
    work = np.array(S, dtype=np.float64, order="C")
    _sym_jacobi(work, JACOBI_MAX_SWEEPS)
    return np.sort(np.diag(work))


def ortho_error(Q: np.ndarray) -> float:
    """``||I - Q^T Q||_2``."""
    Q = np.asarray(Q, dtype=np.float64)
    k = Q.shape[1]
    if k > ORACLE_MAX_COLS:
        raise ValueError(f"oracle limited to {ORACLE_MAX_COLS} columns")
    E = np.eye(k) - gram(Q)
    return float(np.max(np.abs(sym_eigenvalues(E))))
