"""The inverted problem F(λ, v) = Δv + (f∞ - λ) v + χ_n g(x, v/‖v‖_X²) v.

Solutions ``(λ, v)`` with ``v != 0`` map back to solutions ``u = v / ‖v‖_X²`` of
``Δu + f(x, u) u = λ u``; large ``u`` corresponds to small ``v``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    Grid,
    Norms,
    TridiagonalLU,
    cutoff_chi,
    norm_Lp,
    norm_X,
    norm_X_grad,
    tridiag_matvec,
)
from .problem import Problem


class ZeroState(ValueError):
    """Raised where the inverted problem is not differentiable (v = 0)."""


@dataclass
class InvertedState:
    lam: float
    v: np.ndarray
    normX: float
    truncation_n: Optional[float] = None  # None: no truncation (chi == 1)

    @classmethod
    def make(cls, norms: Norms, lam, v, truncation_n=None) -> "InvertedState":
        v = np.asarray(v, dtype=float)
        return cls(float(lam), v, norm_X(norms, v), truncation_n)


class InvertedProblem:
    """Discretized F and its derivatives for one problem, grid and truncation level.

    Potentials and the cutoff are sampled once; everything else is recomputed
    per call so instances can be shared freely.
    """

    def __init__(self, problem: Problem, grid: Grid, norms: Norms, truncation_n=None):
        self.problem = problem
        self.grid = grid
        self.norms = norms
        self.truncation_n = truncation_n
        self.f0 = problem.f0(grid.x)
        self.finf = problem.finf(grid.x)
        self.chi = cutoff_chi(grid, truncation_n)
        self._nl = problem.nonlinearity

    # -- nonlinear part -----------------------------------------------------

    def g(self, w):
        return self._nl.coweight(w) * (self.f0 - self.finf)

    def dg(self, w):
        return self._nl.dweight(w) * (self.finf - self.f0)

    def G(self, v, nx=None):
        v = np.asarray(v, dtype=float)
        if not np.any(v):
            return np.zeros_like(v)
        nx = norm_X(self.norms, v) if nx is None else nx
        return self.chi * self.g(v / nx**2) * v

    def linear(self, lam, v):
        return tridiag_matvec(self.grid.lap_lower, self.grid.lap_diag, self.grid.lap_upper, v) + (
            self.finf - lam
        ) * v

    def residual(self, lam, v, nx=None):
        return self.linear(lam, v) + self.G(v, nx)

    def jacobian(self, lam, v, nx=None) -> "JacobianOperator":
        v = np.asarray(v, dtype=float)
        if not np.any(v):
            raise ZeroState("the Jacobian is undefined at v = 0")
        nx = norm_X(self.norms, v) if nx is None else nx
        w = v / nx**2
        dgw = self.dg(w)
        diag = self.grid.lap_diag + self.finf - lam + self.chi * (self.g(w) + v * dgw / nx**2)
        a = -2.0 * self.chi * dgw * v**2 / nx**3
        b = norm_X_grad(self.norms, v, nx)
        return JacobianOperator(self.grid.lap_lower, diag, self.grid.lap_upper, a, b)


@dataclass
class JacobianOperator:
    """``T + a b^T`` with ``T`` tridiagonal."""

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    a: np.ndarray
    b: np.ndarray
    _lu: Optional[TridiagonalLU] = field(default=None, repr=False)

    def banded_matvec(self, x):
        return tridiag_matvec(self.lower, self.diag, self.upper, x)

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        return self.banded_matvec(x) + self.a * float(self.b @ x)

    def banded_sparse(self):
        return sp.diags([self.lower, self.diag, self.upper], [-1, 0, 1], format="csc")

    def todense(self):
        return self.banded_sparse().toarray() + np.outer(self.a, self.b)

    def _factor(self):
        if self._lu is None:
            self._lu = TridiagonalLU(self.lower, self.diag, self.upper)
        return self._lu

    def solve(self, rhs):
        """Sherman-Morrison on top of the tridiagonal factorization."""
        rhs = np.asarray(rhs, dtype=float)
        cols = rhs.reshape(rhs.shape[0], -1)
        Z = self._factor().solve(np.column_stack([cols, self.a]))
        y = Z[:, -1]
        denom = 1.0 + float(self.b @ y)
        if denom == 0.0:
            raise np.linalg.LinAlgError("rank-one update makes the Jacobian singular")
        Zr = Z[:, :-1]
        out = Zr - np.outer(y, (self.b @ Zr) / denom)
        return out.reshape(rhs.shape)


def solve_bordered(J: JacobianOperator, c, d, e, r, rho, refine: int = 2):
    """Solve ``[[J, c], [d^T, e]] [x; t] = [r; rho]``.

    Block elimination through ``J.solve`` with iterative refinement against the
    full bordered matrix; falls back to sparse LU of the augmented system if the
    tridiagonal part is singular.
    """
    c = np.asarray(c, float)
    d = np.asarray(d, float)

    def apply(x, t):
        return J.matvec(x) + c * t, float(d @ x) + e * t

    def once(r_, rho_):
        Z = J.solve(np.column_stack([r_, c]))
        z1, z2 = Z[:, 0], Z[:, 1]
        den = e - float(d @ z2)
        if den == 0.0 or not math.isfinite(den):
            raise np.linalg.LinAlgError("singular bordered system")
        t = (rho_ - float(d @ z1)) / den
        return z1 - t * z2, t

    try:
        x, t = once(r, rho)
        for _ in range(refine):
            rr, rrho = apply(x, t)
            dx, dt = once(r - rr, rho - rrho)
            x, t = x + dx, t + dt
        if np.all(np.isfinite(x)) and math.isfinite(t):
            return x, t
    except np.linalg.LinAlgError:
        pass
    return _solve_bordered_sparse(J, c, d, e, r, rho)


def _solve_bordered_sparse(J, c, d, e, r, rho):
    m = J.diag.size
    T = J.banded_sparse()
    # unknowns (x, s = b.x, t): T x + a s + c t = r ; b.x - s = 0 ; d.x + e t = rho
    A = sp.bmat(
        [
            [T, sp.csc_matrix(J.a[:, None]), sp.csc_matrix(c[:, None])],
            [sp.csc_matrix(J.b[None, :]), sp.csc_matrix([[-1.0]]), None],
            [sp.csc_matrix(d[None, :]), None, sp.csc_matrix([[e]])],
        ],
        format="csc",
    )
    sol = spla.spsolve(A, np.concatenate([r, [0.0, rho]]))
    return sol[:m], float(sol[m + 1])


# ---------------------------------------------------------------------------
# Function-style API
# ---------------------------------------------------------------------------


def apply_G(problem, grid, norms, v, n=None):
    return InvertedProblem(problem, grid, norms, n).G(v)


def residual_F(problem, grid, norms, state: InvertedState):
    op = InvertedProblem(problem, grid, norms, state.truncation_n)
    return op.residual(state.lam, state.v)


def jacobian_F(problem, grid, norms, state: InvertedState) -> JacobianOperator:
    op = InvertedProblem(problem, grid, norms, state.truncation_n)
    return op.jacobian(state.lam, state.v)


def invert_state(norms: Norms, grid: Grid, v) -> np.ndarray:
    """u = v / ‖v‖_X²; an involution on nonzero grid functions."""
    v = np.asarray(v, dtype=float)
    nx = norm_X(norms, v)
    if nx == 0:
        raise ZeroState("v = 0 corresponds to the point at infinity")
    return v / nx**2


def residual_norm(norms: Norms, F) -> float:
    return norm_Lp(norms, F)
