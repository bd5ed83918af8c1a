"""CSR operator, SpMV, Matrix Market I/O and max-entry equilibration."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO

import numpy as np
import scipy.sparse as sp


class MatrixMarketError(ValueError):
    pass


class UnsupportedFormat(MatrixMarketError):
    pass


class MalformedEntry(MatrixMarketError):
    def __init__(self, line: int, text: str = ""):
        self.line = line
        super().__init__(f"malformed entry on line {line}: {text!r}")


class IndexOutOfRange(MatrixMarketError):
    def __init__(self, line: int, i: int, j: int, n: int):
        self.line = line
        super().__init__(f"line {line}: index ({i}, {j}) outside 1..{n}")


class ZeroRowOrColumn(ValueError):
    def __init__(self, kind: str, index: int):
        self.kind = kind
        self.index = index
        super().__init__(f"{kind} {index} has no nonzero entry")


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Square real matrix in compressed sparse row form.

    Immutable after construction.  Within a row, column indices are strictly
    increasing.
    """

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    vals: np.ndarray
    _validated: bool = field(default=False, repr=False)

    def __post_init__(self):
        row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        vals = np.ascontiguousarray(self.vals, dtype=np.float64)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "vals", vals)
        for a in (row_ptr, col_idx, vals):
            a.setflags(write=False)
        if self._validated:
            return
        n = self.n
        if n < 1:
            raise ValueError("dimension must be positive")
        if row_ptr.shape != (n + 1,) or row_ptr[0] != 0:
            raise ValueError("row_ptr must have length n+1 and start at 0")
        if np.any(np.diff(row_ptr) < 0):
            raise ValueError("row_ptr must be non-decreasing")
        nnz = int(row_ptr[-1])
        if col_idx.shape != (nnz,) or vals.shape != (nnz,):
            raise ValueError("col_idx/vals length must equal row_ptr[n]")
        if nnz and (col_idx.min() < 0 or col_idx.max() >= n):
            raise ValueError("column index out of range")
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite value")
        # strictly increasing within each row
        steps = np.diff(col_idx)
        row_starts = row_ptr[1:-1]
        interior = np.ones(max(nnz - 1, 0), dtype=bool)
        interior[row_starts[(row_starts > 0) & (row_starts < nnz)] - 1] = False
        if np.any(steps[interior] <= 0):
            raise ValueError("column indices must be strictly increasing within a row")

    @classmethod
    def from_coo(cls, n: int, rows, cols, vals) -> "CsrMatrix":
        """Assemble from coordinates; duplicates are summed."""
        coo = sp.coo_array((np.asarray(vals, dtype=np.float64),
                            (np.asarray(rows), np.asarray(cols))), shape=(n, n))
        return cls.from_scipy(coo)

    @classmethod
    def from_scipy(cls, M) -> "CsrMatrix":
        M = sp.csr_array(M)
        if M.shape[0] != M.shape[1]:
            raise ValueError(f"matrix must be square, got {M.shape}")
        M.sum_duplicates()
        M.sort_indices()
        return cls(M.shape[0], M.indptr, M.indices, M.data)

    @classmethod
    def from_dense(cls, D) -> "CsrMatrix":
        D = np.asarray(D, dtype=np.float64)
        return cls.from_scipy(sp.csr_array(D))

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        idx = np.arange(n)
        return cls(n, np.arange(n + 1), idx, np.ones(n))

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @cached_property
    def _csr(self) -> sp.csr_array:
        return sp.csr_array((self.vals, self.col_idx, self.row_ptr), shape=self.shape)

    def to_scipy(self) -> sp.csr_array:
        return self._csr.copy()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def transpose(self) -> "CsrMatrix":
        return CsrMatrix.from_scipy(self._csr.T)

    def __matmul__(self, x):
        return spmv(self, x)


def spmv(A: CsrMatrix, x) -> np.ndarray:
    """``y = A x``; each row is summed in stored order."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n,):
        raise ValueError(f"dimension mismatch: A is {A.n}x{A.n}, x has shape {x.shape}")
    # scipy's csr_matvec is a sequential per-row loop over the stored entries
    return A._csr @ x


def read_matrix_market(stream: IO[str] | str) -> CsrMatrix:
    """Parse a square ``coordinate real {general|symmetric}`` Matrix Market file.

    Symmetric storage is expanded, entries are sorted and duplicates summed.
    ``stream`` may be a text stream or a path.
    """
    if isinstance(stream, (str, bytes)) or hasattr(stream, "__fspath__"):
        with open(stream, "r") as fh:
            return read_matrix_market(fh)

    header = stream.readline()
    tokens = header.strip().split()
    if len(tokens) != 5 or tokens[0] != "%%MatrixMarket":
        raise UnsupportedFormat(f"bad header line: {header.strip()!r}")
    obj, fmt, field_, symmetry = (t.lower() for t in tokens[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise UnsupportedFormat(f"only 'matrix coordinate' is supported, got {obj} {fmt}")
    if field_ not in ("real", "integer"):
        raise UnsupportedFormat(f"unsupported field {field_!r}")
    if symmetry not in ("general", "symmetric"):
        raise UnsupportedFormat(f"unsupported symmetry {symmetry!r}")

    lineno = 1
    size_line = None
    for line in stream:
        lineno += 1
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        size_line = s
        break
    if size_line is None:
        raise MalformedEntry(lineno, "missing size line")
    try:
        nrows, ncols, nnz = (int(t) for t in size_line.split())
    except ValueError:
        raise MalformedEntry(lineno, size_line) from None
    if nrows != ncols:
        raise UnsupportedFormat(f"matrix must be square, got {nrows}x{ncols}")
    n = nrows

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    k = 0
    for line in stream:
        lineno += 1
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        parts = s.split()
        if len(parts) != 3 or k >= nnz:
            raise MalformedEntry(lineno, s)
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise MalformedEntry(lineno, s) from None
        if not (1 <= i <= n and 1 <= j <= n):
            raise IndexOutOfRange(lineno, i, j, n)
        rows[k], cols[k], vals[k] = i - 1, j - 1, v
        k += 1
    if k != nnz:
        raise MalformedEntry(lineno, f"expected {nnz} entries, found {k}")

    if symmetry == "symmetric":
        off = rows != cols
        rows, cols, vals = (np.concatenate([rows, cols[off]]),
                            np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, vals[off]]))
    return CsrMatrix.from_coo(n, rows, cols, vals)


def write_matrix_market(A: CsrMatrix, stream: IO[str] | str, comment: str | None = None) -> None:
    """Write ``general`` coordinate storage with shortest round-trip decimals."""
    if isinstance(stream, (str, bytes)) or hasattr(stream, "__fspath__"):
        with open(stream, "w") as fh:
            write_matrix_market(A, fh, comment)
        return
    buf = io.StringIO()
    buf.write("%%MatrixMarket matrix coordinate real general\n")
    if comment:
        for line in comment.splitlines():
            buf.write(f"%{line}\n")
    buf.write(f"{A.n} {A.n} {A.nnz}\n")
    rows = np.repeat(np.arange(A.n), np.diff(A.row_ptr))
    for i, j, v in zip(rows.tolist(), A.col_idx.tolist(), A.vals.tolist()):
        buf.write(f"{i + 1} {j + 1} {v!r}\n")
    stream.write(buf.getvalue())


def equilibrate(A: CsrMatrix) -> CsrMatrix:
    """Scale columns, then rows, by their maximum absolute entry."""
    M = A.to_scipy()
    absM = abs(M)
    colmax = absM.max(axis=0).toarray().ravel()
    bad = np.flatnonzero(colmax == 0.0)
    if bad.size:
        raise ZeroRowOrColumn("column", int(bad[0]))
    rowmax = absM.max(axis=1).toarray().ravel()
    bad = np.flatnonzero(rowmax == 0.0)
    if bad.size:
        raise ZeroRowOrColumn("row", int(bad[0]))

    rows = np.repeat(np.arange(A.n), np.diff(A.row_ptr))
    vals = A.vals / colmax[A.col_idx]
    rowmax = np.zeros(A.n)
    np.maximum.at(rowmax, rows, np.abs(vals))
    vals = vals / rowmax[rows]
    return CsrMatrix(A.n, A.row_ptr, A.col_idx, vals, _validated=True)
