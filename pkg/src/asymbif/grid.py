"""Truncated-domain discretization: nodes, Laplacian, quadrature and discrete norms.

Line geometry samples ``[-L, L]`` at ``m`` interior nodes; radial geometry samples
``(0, L)`` at ``r_i = i h``. Homogeneous Dirichlet values sit at ``|x| = L``. At
the origin of a radial grid the ghost value is closed by the quadratic
regularity condition ``w'(0) = 0``, i.e. ``w_0 = (4 w_1 - w_2) / 3``.

Grid functions are plain float arrays of length ``m`` (boundary values implied).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg.lapack import dgttrf, dgttrs


@dataclass(frozen=True, eq=False)
class Grid:
    geometry: str
    N: int
    L: float
    m: int
    h: float
    x: np.ndarray
    # tridiagonal Laplacian: lower[i] couples row i+1 to i, upper[i] row i to i+1
    lap_lower: np.ndarray = field(repr=False)
    lap_diag: np.ndarray = field(repr=False)
    lap_upper: np.ndarray = field(repr=False)
    d1: sp.csr_matrix = field(repr=False)
    second_derivs: tuple = field(repr=False)

    @property
    def radius(self) -> np.ndarray:
        return np.abs(self.x)

    @property
    def lap(self) -> sp.csr_matrix:
        return sp.diags(
            [self.lap_lower, self.lap_diag, self.lap_upper], [-1, 0, 1], format="csr"
        )

    def metadata(self) -> dict:
        return {"geometry": self.geometry, "N": self.N, "L": self.L, "m": self.m, "h": self.h}


def make_grid(problem=None, *, geometry=None, N=None, L=None, m=None) -> Grid:
    """Build a grid from a Problem or explicit parameters (keywords win)."""
    geometry = geometry or problem.geometry
    N = N if N is not None else problem.N
    L = float(L if L is not None else problem.L)
    m = int(m if m is not None else problem.m)
    if m < 16:
        raise ValueError("grid needs m >= 16 interior nodes")
    if L <= 0:
        raise ValueError("L must be positive")
    ones = np.ones(m)
    if geometry == "line":
        h = 2 * L / (m + 1)
        x = -L + h * np.arange(1, m + 1)
        # exact symmetry about 0
        x = 0.5 * (x - x[::-1])
        lower = ones[:-1] / h**2
        upper = ones[:-1] / h**2
        diag = -2 * ones / h**2
        d1 = sp.diags([-ones[:-1], ones[:-1]], [-1, 1], format="csr") / (2 * h)
        second = (sp.diags([lower, diag, upper], [-1, 0, 1], format="csr"),)
    elif geometry == "radial":
        if N < 2:
            raise ValueError("radial geometry needs N >= 2")
        h = L / (m + 1)
        x = h * np.arange(1, m + 1)
        d1 = sp.lil_matrix((m, m))
        dss = sp.lil_matrix((m, m))
        for i in range(m):
            if i > 0:
                d1[i, i - 1] = -1 / (2 * h)
                dss[i, i - 1] = 1 / h**2
            if i < m - 1:
                d1[i, i + 1] = 1 / (2 * h)
                dss[i, i + 1] = 1 / h**2
            dss[i, i] = -2 / h**2
        # ghost w_0 = (4 w_1 - w_2)/3 enters row 0 through its "lower" coefficient
        d1[0, 0] += -(1 / (2 * h)) * (4 / 3)
        d1[0, 1] += -(1 / (2 * h)) * (-1 / 3)
        dss[0, 0] += (1 / h**2) * (4 / 3)
        dss[0, 1] += (1 / h**2) * (-1 / 3)
        d1 = d1.tocsr()
        dss = dss.tocsr()
        drad = (sp.diags((N - 1) / x) @ d1).tocsr()
        full = (dss + drad).tocsr()
        diag = full.diagonal()
        upper = full.diagonal(1).copy()
        lower = full.diagonal(-1).copy()
        second = (dss, drad)
    else:
        raise ValueError(f"unknown geometry {geometry!r}")
    return Grid(
        geometry=geometry, N=int(N), L=L, m=m, h=h, x=x,
        lap_lower=np.asarray(lower, float), lap_diag=np.asarray(diag, float),
        lap_upper=np.asarray(upper, float), d1=d1, second_derivs=second,
    )


def tridiag_matvec(lower, diag, upper, w):
    out = diag * w
    out[1:] += lower * w[:-1]
    out[:-1] += upper * w[1:]
    return out


def laplacian(grid: Grid, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return tridiag_matvec(grid.lap_lower, grid.lap_diag, grid.lap_upper, w)


class TridiagonalLU:
    """LAPACK ``gttrf`` factorization of a general tridiagonal matrix."""

    def __init__(self, lower, diag, upper):
        dl, d, du, du2, ipiv, info = dgttrf(
            np.array(lower, float), np.array(diag, float), np.array(upper, float)
        )
        if info > 0:
            raise np.linalg.LinAlgError(f"singular tridiagonal matrix (pivot {info})")
        self._f = (dl, d, du, du2, ipiv)

    def solve(self, b, trans: bool = False) -> np.ndarray:
        dl, d, du, du2, ipiv = self._f
        x, info = dgttrs(dl, d, du, du2, ipiv, np.asarray(b, float), trans="T" if trans else "N")
        if info != 0:
            raise np.linalg.LinAlgError("tridiagonal solve failed")
        return x


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------


def sphere_area(N: int) -> float:
    """Surface area of the unit sphere in R^N."""
    return 2 * math.pi ** (N / 2) / math.gamma(N / 2)


@dataclass(frozen=True, eq=False)
class Norms:
    """Trapezoidal quadrature on the grid and the discrete L^p / W^{2,p} norms.

    The X-norm is ``(|w|_p^p + |D1 w|_p^p + sum_k |D2_k w|_p^p)^(1/p)`` where the
    second-order terms are the Laplacian stencil on a line and the pair
    ``(w'', (N-1)/r w')`` on a radial grid.
    """

    grid: Grid
    p: float
    weights: np.ndarray = field(repr=False)
    ops: tuple = field(repr=False)

    def lp(self, w) -> float:
        return norm_Lp(self, w)

    def x(self, w) -> float:
        return norm_X(self, w)


def make_norms(grid: Grid, p: float) -> Norms:
    if p < 1:
        raise ValueError("p must be >= 1")
    if grid.geometry == "line":
        wts = np.full(grid.m, grid.h)
    else:
        wts = sphere_area(grid.N) * grid.x ** (grid.N - 1) * grid.h
    return Norms(grid=grid, p=float(p), weights=wts, ops=(grid.d1,) + tuple(grid.second_derivs))


def integrate(norms: Norms, w) -> float:
    return float(np.dot(norms.weights, w))


def inner(norms: Norms, a, b) -> float:
    return float(np.dot(norms.weights, np.asarray(a) * np.asarray(b)))


def norm_Lp(norms: Norms, w, p=None) -> float:
    p = norms.p if p is None else p
    w = np.abs(np.asarray(w, dtype=float))
    if p == 2:
        return math.sqrt(float(np.dot(norms.weights, w * w)))
    return float(np.dot(norms.weights, w**p)) ** (1.0 / p)


def norm_sup(w) -> float:
    w = np.asarray(w, dtype=float)
    return float(np.max(np.abs(w))) if w.size else 0.0


def _x_terms(norms: Norms, w):
    return [w] + [op @ w for op in norms.ops]


def norm_X(norms: Norms, w) -> float:
    w = np.asarray(w, dtype=float)
    p = norms.p
    tot = 0.0
    for t in _x_terms(norms, w):
        a = np.abs(t)
        tot += float(np.dot(norms.weights, a * a if p == 2 else a**p))
    return tot ** (1.0 / p)


def norm_X_grad(norms: Norms, w, nx=None) -> np.ndarray:
    """Gradient of ``w -> norm_X(w)``; undefined at ``w = 0``."""
    w = np.asarray(w, dtype=float)
    nx = norm_X(norms, w) if nx is None else nx
    if nx == 0:
        raise ZeroDivisionError("X-norm gradient is undefined at 0")
    p = norms.p
    q = norms.weights
    g = q * (np.abs(w) ** (p - 2) * w if p != 2 else w)
    for op in norms.ops:
        t = op @ w
        g = g + op.T @ (q * (np.abs(t) ** (p - 2) * t if p != 2 else t))
    return g / nx ** (p - 1)


def x_gram(norms: Norms) -> sp.csr_matrix:
    """Gram matrix of the Hilbert (p = 2) version of the X inner product."""
    Q = sp.diags(norms.weights)
    G = Q.copy()
    for op in norms.ops:
        G = G + op.T @ Q @ op
    return G.tocsr()


def cutoff_chi(grid: Grid, n) -> np.ndarray:
    """Indicator of ``|x| <= n`` at the nodes; ``n=None`` means no truncation."""
    if n is None or math.isinf(n):
        return np.ones(grid.m)
    if n <= 0:
        raise ValueError("truncation radius must be positive")
    return (grid.radius <= n).astype(float)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def fmt(v) -> str:
    return format(float(v), ".17g")


def write_grid_csv(path, grid: Grid, columns: dict, meta: dict | None = None):
    """Write ``x`` plus named columns, preceded by a ``#`` JSON metadata line."""
    header = {"grid": grid.metadata()}
    if meta:
        header.update(meta)
    names = ["x"] + list(columns)
    cols = [grid.x] + [np.asarray(c, float) for c in columns.values()]
    lines = ["# " + json.dumps(header, sort_keys=True), ",".join(names)]
    for row in zip(*cols):
        lines.append(",".join(fmt(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_grid_csv(path):
    """Inverse of :func:`write_grid_csv`: returns ``(header, {name: array})``."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing metadata header")
        header = json.loads(first[2:])
        names = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array(rows, dtype=float).reshape(-1, len(names))
    return header, {n: data[:, j] for j, n in enumerate(names)}
