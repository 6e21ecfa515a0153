"""Pseudo-arclength continuation of the inverted branch from (λ∞, 0) toward λ*."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .grid import Grid, Norms, norm_Lp, norm_sup, norm_X, x_gram
from .operator import InvertedProblem, InvertedState, ZeroState, solve_bordered
from .problem import Problem
from .spectral import Eigenpair

log = logging.getLogger(__name__)

REACHED_FLOOR = "reached-lambda-floor"
MAX_STEPS = "max-steps"
NEWTON_FAILURE = "newton-failure"
BLOWUP = "blowup-detected"


class SeedFailure(RuntimeError):
    pass


@dataclass
class ContinuationOptions:
    ds: float = 1e-3
    max_steps: int = 2000
    lambda_floor: Optional[float] = None  # default: lambda_* + 0.02 (lambda_inf - lambda_*)
    tol_newton: float = 1e-10
    ds_min: float = 1e-10
    ds_max: Optional[float] = None  # default: 2 * ds
    max_newton: int = 12
    grow: float = 1.3
    fast_iters: int = 3
    fast_streak: int = 4

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class BranchPoint:
    lam: float
    v: Optional[np.ndarray]
    u: Optional[np.ndarray]
    normX_v: float
    normX_u: float
    sup_u: float
    newton_iters: int
    residual_Y: float
    positive: bool


@dataclass
class Branch:
    sign: int
    truncation_n: Optional[float]
    points: List[BranchPoint] = field(default_factory=list)
    termination: str = ""
    lambda_infinity: float = math.nan
    lambda_star: float = math.nan
    options: dict = field(default_factory=dict)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([pt.lam for pt in self.points])

    @property
    def normX_v(self) -> np.ndarray:
        return np.array([pt.normX_v for pt in self.points])

    def __len__(self):
        return len(self.points)


def default_floor(lambda_star: float, lambda_inf: float) -> float:
    return lambda_star + 0.02 * (lambda_inf - lambda_star)


def make_point(op: InvertedProblem, lam: float, v: np.ndarray, iters: int, residual=None) -> BranchPoint:
    nv = norm_X(op.norms, v)
    u = v / nv**2
    if residual is None:
        residual = norm_Lp(op.norms, op.residual(lam, v, nv))
    return BranchPoint(
        lam=float(lam), v=v, u=u, normX_v=nv, normX_u=norm_X(op.norms, u),
        sup_u=norm_sup(u), newton_iters=iters, residual_Y=float(residual),
        positive=bool(np.all(v > 0)),
    )


def _converged(res, nv, tol):
    # relative to ‖v‖ so that points near the bifurcation are resolved as well
    return res <= tol * nv


def newton_bordered(op: InvertedProblem, lam, v, d, e, constraint, tol, max_iter):
    """Newton on ``F(λ, v) = 0`` plus the linear constraint ``constraint(v, λ) = 0``.

    ``d``, ``e`` are the constraint's gradients in ``v`` and ``λ``. Returns
    ``(lam, v, iterations, residual)`` or ``None`` on failure.
    """
    v = v.copy()
    for it in range(max_iter + 1):
        nv = norm_X(op.norms, v)
        if nv == 0 or not math.isfinite(nv):
            return None
        F = op.residual(lam, v, nv)
        res = norm_Lp(op.norms, F)
        c = constraint(v, lam)
        if not math.isfinite(res):
            return None
        if it > 0 and _converged(res, nv, tol) and abs(c) <= 1e-12 * max(1.0, nv):
            return lam, v, it, res
        if it == max_iter:
            return None
        J = op.jacobian(lam, v, nv)
        try:
            dv, dl = solve_bordered(J, -v, d, e, -F, -c)
        except (np.linalg.LinAlgError, ValueError):
            return None
        v = v + dv
        lam = lam + dl
    return None


def newton_fixed_lambda(op: InvertedProblem, lam, v, tol, max_iter=20):
    v = v.copy()
    for it in range(max_iter + 1):
        nv = norm_X(op.norms, v)
        if nv == 0 or not math.isfinite(nv):
            return None
        F = op.residual(lam, v, nv)
        res = norm_Lp(op.norms, F)
        if not math.isfinite(res):
            return None
        if it > 0 and _converged(res, nv, tol):
            return v, it, res
        if it == max_iter:
            return None
        try:
            v = v + op.jacobian(lam, v, nv).solve(-F)
        except np.linalg.LinAlgError:
            return None
    return None


def seed_branch(problem: Problem, grid: Grid, norms: Norms, eig: Eigenpair, sign: int = 1,
                s0: float = 1e-5, truncation_n=None, tol_newton: float = 1e-10,
                lambda_star: Optional[float] = None) -> InvertedState:
    """Converged branch state with X-projection ``s0`` on the principal eigenfunction.

    Starts from ``v = sign s0 φ∞ / ‖φ∞‖_X`` at ``λ = λ∞`` and runs Newton with the
    amplitude held fixed; ``λ`` is solved for because nontrivial solutions have
    ``λ < λ∞`` strictly.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if not (1e-6 < s0 < 1e-2):
        raise SeedFailure(f"seed amplitude {s0:g} outside (1e-6, 1e-2); corrector would leave the bifurcation neighbourhood")
    op = InvertedProblem(problem, grid, norms, truncation_n)
    phat = sign * eig.phi / norm_X(norms, eig.phi)
    v0 = s0 * phat
    Gx = x_gram(norms)
    d = Gx @ phat

    def constraint(v, lam):
        return float(d @ (v - v0))

    out = newton_bordered(op, eig.lam, v0, d, 0.0, constraint, tol_newton, max_iter=25)
    if out is None:
        raise SeedFailure(f"Newton corrector diverged from the seed (s0={s0:g}); try a smaller amplitude")
    lam, v, _, _ = out
    if not np.all(sign * v > 0):
        raise SeedFailure("seed solution is not of one sign")
    if lam > eig.lam + 1e-10 or (lambda_star is not None and lam <= lambda_star):
        raise SeedFailure(f"seed landed at lambda={lam:.12g}, outside (lambda_*, lambda_inf]")
    return InvertedState.make(norms, lam, v, truncation_n)


def _tangent(op: InvertedProblem, Gx, lam, v):
    """Unit tangent (X-metric on v) at a solution, oriented toward decreasing λ."""
    J = op.jacobian(lam, v)
    d = Gx @ v
    dv, dl = solve_bordered(J, -v, d, 0.0, np.zeros_like(v), 1.0)
    nrm = math.sqrt(float(dv @ (Gx @ dv)) + dl * dl)
    dv, dl = dv / nrm, dl / nrm
    if dl > 0:
        dv, dl = -dv, -dl
    return dv, dl


def continue_branch(problem: Problem, grid: Grid, norms: Norms, seed: InvertedState,
                    opts: Optional[ContinuationOptions] = None, *, lambda_infinity: float,
                    lambda_star: float, sign: Optional[int] = None) -> Branch:
    """Trace the branch from ``seed`` until ``λ`` drops below the floor.

    Secant predictor, Newton corrector on the arclength-bordered system. The
    step halves after a failed correction and grows by ``opts.grow`` after
    ``opts.fast_streak`` consecutive quick ones. Computed points are never
    discarded: a failure returns the partial branch.
    """
    opts = opts or ContinuationOptions()
    if seed.v is None or not np.any(seed.v):
        raise ZeroState("cannot continue from v = 0")
    floor = opts.lambda_floor if opts.lambda_floor is not None else default_floor(lambda_star, lambda_infinity)
    if floor <= lambda_star:
        raise ValueError(f"lambda_floor must lie in ({lambda_star:.12g}, {lambda_infinity:.12g})")
    ds_max = opts.ds_max if opts.ds_max is not None else 2 * opts.ds
    sign = sign if sign is not None else (1 if seed.v[np.argmax(np.abs(seed.v))] > 0 else -1)

    op = InvertedProblem(problem, grid, norms, seed.truncation_n)
    Gx = x_gram(norms)
    first = make_point(op, seed.lam, seed.v, 0)
    branch = Branch(sign=sign, truncation_n=seed.truncation_n, points=[first],
                    lambda_infinity=lambda_infinity, lambda_star=lambda_star,
                    options={**opts.to_dict(), "lambda_floor": floor, "ds_max": ds_max})

    tv, tl = _tangent(op, Gx, seed.lam, seed.v)
    v_k, lam_k = seed.v, seed.lam
    ds = opts.ds
    streak = 0
    steps = 0
    n0 = first.normX_v
    while True:
        if steps >= opts.max_steps:
            branch.termination = MAX_STEPS
            break
        d = Gx @ tv
        v_pred = v_k + ds * tv
        lam_pred = lam_k + ds * tl

        def constraint(v, lam, v_k=v_k, lam_k=lam_k, d=d, ds=ds):
            return float(d @ (v - v_k)) + (lam - lam_k) * tl - ds

        out = newton_bordered(op, lam_pred, v_pred, d, tl, constraint, opts.tol_newton, opts.max_newton)
        if out is not None and not np.all(sign * out[1] > 0):
            out = None
        if out is None:
            ds *= 0.5
            streak = 0
            if ds < opts.ds_min:
                branch.termination = NEWTON_FAILURE
                break
            continue
        lam_new, v_new, iters, res = out
        steps += 1

        if lam_new < floor:
            # land exactly on the floor when possible
            t = (lam_k - floor) / (lam_k - lam_new)
            guess = v_k + t * (v_new - v_k)
            fixed = newton_fixed_lambda(op, floor, guess, opts.tol_newton)
            if fixed is not None and np.all(sign * fixed[0] > 0):
                branch.points.append(make_point(op, floor, fixed[0], fixed[1], fixed[2]))
            else:
                branch.points.append(make_point(op, lam_new, v_new, iters, res))
            branch.termination = REACHED_FLOOR
            break

        pt = make_point(op, lam_new, v_new, iters, res)
        branch.points.append(pt)
        if steps > 2 and pt.normX_v < 0.5 * n0:
            branch.termination = BLOWUP
            break

        # secant in the X-metric
        sv = v_new - v_k
        sl = lam_new - lam_k
        nrm = math.sqrt(float(sv @ (Gx @ sv)) + sl * sl)
        tv, tl = sv / nrm, sl / nrm
        v_k, lam_k = v_new, lam_new

        if iters <= opts.fast_iters:
            streak += 1
            if streak >= opts.fast_streak:
                ds = min(ds * opts.grow, ds_max)
                streak = 0
        else:
            streak = 0
    log.info("branch sign=%+d n=%s: %d points, %s", sign, seed.truncation_n, len(branch), branch.termination)
    return branch


def trace(problem: Problem, grid: Grid, norms: Norms, eig: Eigenpair, lambda_star: float,
          sign: int = 1, s0: float = 1e-5, truncation_n=None,
          opts: Optional[ContinuationOptions] = None) -> Branch:
    """Seed plus continuation in one call."""
    opts = opts or ContinuationOptions()
    seed = seed_branch(problem, grid, norms, eig, sign, s0, truncation_n, opts.tol_newton, lambda_star)
    return continue_branch(problem, grid, norms, seed, opts, lambda_infinity=eig.lam,
                           lambda_star=lambda_star, sign=sign)


def continue_truncated(problem: Problem, grid: Grid, norms: Norms, eig: Eigenpair, lambda_star: float,
                       n_list, sign: int = 1, s0: float = 1e-5,
                       opts: Optional[ContinuationOptions] = None) -> List[Branch]:
    out = []
    for n in n_list:
        if not (0 < n <= grid.L):
            raise ValueError(f"truncation radius {n} outside (0, L]")
        out.append(trace(problem, grid, norms, eig, lambda_star, sign, s0, float(n), opts))
    return out


def state_at_lambda(problem: Problem, grid: Grid, norms: Norms, branch: Branch, lam: float,
                    tol: float = 1e-10) -> np.ndarray:
    """Solution ``v`` on ``branch`` at exactly ``λ = lam`` (Newton from the bracketing points)."""
    lams = branch.lambdas
    for k in range(len(lams) - 1):
        a, b = lams[k], lams[k + 1]
        if min(a, b) <= lam <= max(a, b) and branch.points[k].v is not None:
            t = 0.0 if a == b else (a - lam) / (a - b)
            guess = branch.points[k].v + t * (branch.points[k + 1].v - branch.points[k].v)
            op = InvertedProblem(problem, grid, norms, branch.truncation_n)
            out = newton_fixed_lambda(op, lam, guess, tol)
            if out is None:
                raise RuntimeError(f"Newton failed at lambda={lam}")
            return out[0]
    raise ValueError(f"lambda={lam} not spanned by the branch")
