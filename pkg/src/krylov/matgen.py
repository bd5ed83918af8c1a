"""Deterministic test inputs: logscaled and glued panels, Laplace stencils, RHS.

Randomness comes from numpy's Philox-4x64 counter-based generator.  Uniforms
are drawn with ``Generator.random`` and turned into standard normals by the
Box-Muller transform below (not numpy's ziggurat), so every output is a pure
function of its parameters and seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dense import householder_qr
from .sparse import CsrMatrix, spmv


def philox(seed: int) -> np.random.Generator:
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.Philox(int(seed)))


def box_muller(rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` standard normals from pairs of uniforms."""
    half = (size + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1]
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty(2 * half)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:size]


def gaussian(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    # consumed column by column so a column-major matrix sees the stream in order
    return np.asfortranarray(box_muller(rng, rows * cols).reshape((rows, cols), order="F"))


def random_orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    Q, _ = householder_qr(gaussian(rng, rows, cols))
    return Q


def logspace_spectrum(k: int, kappa: float) -> np.ndarray:
    """``kappa^(-(i-1)/(k-1))`` for i = 1..k; ``[1]`` when k = 1."""
    if k == 1:
        return np.ones(1)
    return float(kappa) ** (-np.arange(k) / (k - 1))


@dataclass(frozen=True)
class Panel:
    """A generated dense matrix plus what was planted in it."""

    matrix: np.ndarray
    planted: np.ndarray
    params: dict

    def sidecar(self) -> dict:
        rows, cols = self.matrix.shape
        return {"rows": rows, "cols": cols, "planted_spectrum": self.planted.tolist(), **self.params}


def gen_logscaled(n: int, k: int, kappa: float, seed: int) -> Panel:
    """``X diag(sigma) Y^T`` with random orthonormal X (n x k), Y (k x k)."""
    if not (n >= k >= 1):
        raise ValueError("need n >= k >= 1")
    if not kappa >= 1:
        raise ValueError("kappa must be >= 1")
    rng = philox(seed)
    X = random_orthonormal(rng, n, k)
    Y = random_orthonormal(rng, k, k)
    sigma = logspace_spectrum(k, kappa)
    V = np.asfortranarray((X * sigma) @ Y.T)
    return Panel(V, sigma, {"kind": "logscaled", "n": n, "k": k, "kappa": kappa, "seed": seed})


def gen_glued(n: int, p: int, s: int, kappa_panel: float, growth: float = 2.0,
              coupling: float = 0.1, seed: int = 0) -> Panel:
    """``p`` panels of ``s`` columns, each ~kappa_panel conditioned, shrinking by ``growth``.

    Panel j is ``growth^-(j-1) * X'_j diag(sigma) Y_j^T``, where X'_j is a slice
    of one big random orthonormal matrix nudged toward a shared extra
    direction so the panels are not exactly orthogonal to each other.  The
    prefix ``V[:, :j*s]`` then has condition number near
    ``growth^(j-1) * kappa_panel``.
    """
    if p < 1 or s < 1 or n < p * s + 1:
        raise ValueError("need p, s >= 1 and n > p*s")
    if growth < 1 or not 0 <= coupling < 1 or kappa_panel < 1:
        raise ValueError("need growth >= 1, 0 <= coupling < 1, kappa_panel >= 1")
    rng = philox(seed)
    X = random_orthonormal(rng, n, p * s + 1)
    shared = X[:, -1]
    sigma = logspace_spectrum(s, kappa_panel)
    V = np.empty((n, p * s), order="F")
    planted = []
    for j in range(p):
        cols = slice(j * s, (j + 1) * s)
        w = box_muller(rng, s)
        w /= np.linalg.norm(w)
        Xj = X[:, cols] + coupling * np.outer(shared, w)
        Xj /= np.linalg.norm(Xj, axis=0)
        Yj = random_orthonormal(rng, s, s)
        scale = float(growth) ** (-j)
        V[:, cols] = scale * ((Xj * sigma) @ Yj.T)
        planted.append(scale * sigma)
    params = {"kind": "glued", "n": n, "p": p, "s": s, "kappa_panel": kappa_panel,
              "growth": growth, "coupling": coupling, "seed": seed}
    return Panel(V, np.concatenate(planted), params)


def _grid_coo(shape: tuple[int, ...], offsets: list[tuple[tuple[int, ...], float]]):
    # row-major ordering: the last axis varies fastest
    dims = np.array(shape)
    n = int(np.prod(dims))
    idx = np.arange(n).reshape(shape)
    coords = np.indices(shape).reshape(len(shape), -1)
    rows, cols, vals = [], [], []
    for off, w in offsets:
        tgt = coords + np.array(off)[:, None]
        ok = np.all((tgt >= 0) & (tgt < dims[:, None]), axis=0)
        rows.append(idx.ravel()[ok])
        cols.append(idx[tuple(tgt[:, ok])])
        vals.append(np.full(int(ok.sum()), w))
    return n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def gen_laplace2d(nx: int, ny: int, stencil: int = 5) -> CsrMatrix:
    """Dirichlet 2-D Laplacian on an ny x nx grid (5- or 9-point)."""
    if nx < 2 or ny < 2:
        raise ValueError("grid dimensions must be >= 2")
    if stencil == 5:
        offsets = [((0, 0), 4.0), ((-1, 0), -1.0), ((1, 0), -1.0), ((0, -1), -1.0), ((0, 1), -1.0)]
    elif stencil == 9:
        offsets = [((0, 0), 8.0 / 3.0)]
        offsets += [((di, dj), -1.0 / 3.0)
                    for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]
    else:
        raise ValueError("stencil must be 5 or 9")
    return CsrMatrix.from_coo(*_grid_coo((ny, nx), offsets))


def gen_laplace3d(nx: int, ny: int, nz: int) -> CsrMatrix:
    """Dirichlet 7-point 3-D Laplacian."""
    if min(nx, ny, nz) < 2:
        raise ValueError("grid dimensions must be >= 2")
    offsets = [((0, 0, 0), 6.0)]
    for axis in range(3):
        for d in (-1, 1):
            off = [0, 0, 0]
            off[axis] = d
            offsets.append((tuple(off), -1.0))
    return CsrMatrix.from_coo(*_grid_coo((nz, ny, nx), offsets))


def gen_rhs_ones(A: CsrMatrix) -> np.ndarray:
    """Right-hand side whose exact solution is the all-ones vector."""
    return spmv(A, np.ones(A.n))
