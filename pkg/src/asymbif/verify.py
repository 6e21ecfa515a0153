"""Post-hoc checks on computed branches.

Each checker consumes stored branch data and returns a plain report with a
per-check status (``pass``, ``fail`` or ``not-evaluated``) plus witnesses, so a
failed check can be traced back to a specific point or node.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla
from scipy.stats import spearmanr

from .continuation import Branch, BranchPoint
from .grid import Grid, Norms, fmt, make_grid, make_norms, norm_sup, norm_X, x_gram
from .problem import Problem, evaluate_f, lambda_star_of

PASS = "pass"
FAIL = "fail"
NOT_EVALUATED = "not-evaluated"

BOUND_SLACK = 1e-12
NOISE_FLOOR = 1e-13
MIN_TAIL_NODES = 10
RATE_TOLERANCE = 0.05
SAFETY = 1.2
PROBE_SEED = 20240607
SPEARMAN_MIN = 0.99


class TailTooShort(ValueError):
    """Too few nodes beyond the crossing radius for a decay fit."""


class NoThreshold(ValueError):
    """No positive amplitude keeps f within delta of f0."""


# ---------------------------------------------------------------------------
# Exponential decay
# ---------------------------------------------------------------------------


@dataclass
class DecayReport:
    epsilon: float
    eta: float
    C_eps: float
    fitted_rate: float
    bound_ok: bool
    rate_ok: bool = True
    tail_nodes: int = 0
    fit_nodes: int = 0
    worst_node: int = -1  # index of the tightest tail node
    worst_margin: float = math.inf  # min over the tail of bound - |v|, relative to |v|_inf

    @property
    def predicted_rate(self) -> float:
        return math.sqrt(self.eta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["predicted_rate"] = self.predicted_rate
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def crossing_radius(grid: Grid, finf_values, level: float) -> float:
    """Smallest node radius beyond which ``f∞ <= level`` (0 if it holds everywhere)."""
    above = np.asarray(finf_values) > level
    return float(grid.radius[above].max()) if np.any(above) else 0.0


def check_decay(problem: Problem, point, epsilon_frac: float = 0.1, *, grid: Optional[Grid] = None,
                lambda_star: Optional[float] = None) -> DecayReport:
    """Compare the tail of ``v`` against ``|v|_∞ exp(-√η (|x| - C_ε))``.

    Parameters
    ----------
    point : BranchPoint or (lam, v) pair
    epsilon_frac : float
        ``ε = epsilon_frac (λ - λ*)``, in (0, 1).

    Raises
    ------
    TailTooShort
        If fewer than 10 nodes lie beyond ``C_ε``.
    """
    if not (0 < epsilon_frac < 1):
        raise ValueError("epsilon_frac must lie in (0, 1)")
    lam, v = (point.lam, point.v) if isinstance(point, BranchPoint) else point
    if v is None:
        raise ValueError("decay check needs the solution values")
    v = np.asarray(v, dtype=float)
    grid = grid or make_grid(problem)
    lam_star = lambda_star if lambda_star is not None else lambda_star_of(problem, grid.x)
    if not lam > lam_star:
        raise ValueError(f"lambda={lam:.12g} must exceed lambda_*={lam_star:.12g}")
    eps = epsilon_frac * (lam - lam_star)
    eta = lam - lam_star - eps
    rate = math.sqrt(eta)
    C = crossing_radius(grid, problem.finf(grid.x), lam_star + eps)

    r = grid.radius
    tail = r > C
    if tail.sum() < MIN_TAIL_NODES:
        raise TailTooShort(f"only {int(tail.sum())} nodes beyond C_eps={C:.6g}; enlarge the domain")
    a = np.abs(v)
    vmax = float(a.max())
    bound = vmax * np.exp(-rate * (r - C))
    margin = np.where(tail, bound - a, np.inf)
    worst = int(np.argmin(margin))
    bound_ok = bool(np.all(margin[tail] >= -BOUND_SLACK * vmax))

    fitted, nfit = _fit_tail_rate(r, a, vmax, C + 2 * grid.h)
    return DecayReport(
        epsilon=eps, eta=eta, C_eps=C, fitted_rate=fitted, bound_ok=bound_ok,
        rate_ok=bool(math.isfinite(fitted) and fitted >= rate - RATE_TOLERANCE),
        tail_nodes=int(tail.sum()), fit_nodes=nfit, worst_node=worst,
        worst_margin=float(margin[worst] / vmax) if vmax > 0 else math.inf,
    )


def fit_window(r, a, vmax, r_start):
    """Nodes with ``r >= r_start`` out to where ``|v|`` first hits the noise floor."""
    r = np.asarray(r)
    cand = r >= r_start - 1e-12
    low = cand & (a < NOISE_FLOOR * vmax)
    r_cut = r[low].min() if np.any(low) else np.inf
    return cand & (r < r_cut)


def _fit_tail_rate(r, a, vmax, r_start):
    win = fit_window(r, a, vmax, r_start)
    if win.sum() < 2:
        return math.nan, int(win.sum())
    slope = np.polyfit(r[win], np.log(a[win]), 1)[0]
    return float(-slope), int(win.sum())


def write_decay_csv(path, grid: Grid, v):
    """``(x, log|v|)`` pairs for plotting; zero entries are written as -inf."""
    with np.errstate(divide="ignore"):
        logv = np.log(np.abs(np.asarray(v, float)))
    with open(path, "w", newline="\n") as fh:
        fh.write("x,log_abs_v\n")
        for xi, li in zip(grid.x, logv):
            fh.write(f"{fmt(xi)},{fmt(li)}\n")


# ---------------------------------------------------------------------------
# A-priori bound
# ---------------------------------------------------------------------------


@dataclass
class AprioriBound:
    mu: float
    S: float
    C_embed: float
    A: float
    N_mu: float
    safety: float = SAFETY

    @property
    def A_safe(self) -> float:
        return self.safety * self.A

    def to_dict(self) -> dict:
        d = asdict(self)
        d["A_safe"] = self.A_safe
        return d


def apriori_constant(C_embed: float, S: float) -> float:
    if S <= 0 or C_embed <= 0:
        raise ValueError("C_embed and S must be positive")
    return C_embed / S


def _threshold_violation(problem: Problem, x, sigma: float) -> float:
    f0 = problem.f0(x)
    s = np.array([sigma, -sigma])
    f = evaluate_f(problem, x[:, None], s[None, :])
    return float(np.max(f - (f0 + problem.delta)[:, None]))


def amplitude_threshold(problem: Problem, x, lo_exp: float = -12, hi_exp: float = 6,
                        scan: int = 361) -> float:
    """Largest ``S`` with ``f(x, s) <= f0(x) + delta`` for every node and ``|s| < S``.

    A logarithmic scan brackets the first violation, then bisection refines it.
    Raises :class:`NoThreshold` if even the smallest scanned amplitude violates
    the inequality; returns ``inf`` if no scanned amplitude does.
    """
    x = np.asarray(x, dtype=float)
    sig = np.logspace(lo_exp, hi_exp, scan)
    bad = np.array([_threshold_violation(problem, x, s) > 0 for s in sig])
    if bad[0]:
        raise NoThreshold(f"f exceeds f0 + delta already at |s| = {sig[0]:g}")
    if not bad.any():
        return math.inf
    k = int(np.argmax(bad))
    lo, hi = sig[k - 1], sig[k]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _threshold_violation(problem, x, mid) > 0:
            hi = mid
        else:
            lo = mid
    return float(lo)


def probe_functions(grid: Grid, norms: Norms, snapshots: Sequence[np.ndarray] = (),
                    n_modes: int = 12, n_random: int = 16, seed: int = PROBE_SEED):
    """Probe set for the embedding constant.

    Dirichlet modes of the Laplacian, tapered random Gaussian mixtures from a
    fixed seed, discrete Green's functions of the X Gram matrix (the maximizers
    of ``|w(x0)| / ‖w‖_X`` when p = 2) and any supplied snapshots.
    """
    x, r, L = grid.x, grid.radius, grid.L
    probes = []
    if grid.geometry == "line":
        for k in range(1, n_modes + 1):
            probes.append(np.sin(k * np.pi * (x + L) / (2 * L)))
    else:
        for k in range(1, n_modes + 1):
            # regular at 0, zero at L; exact Laplacian modes for N = 3
            probes.append(np.sinc(k * r / L))
    rng = np.random.default_rng(seed)
    taper = np.cos(0.5 * np.pi * r / L)
    lo = -L / 2 if grid.geometry == "line" else 0.0
    for _ in range(n_random):
        c = rng.uniform(lo, L / 2, 6)
        w = rng.uniform(0.5, 4.0, 6)
        amp = rng.standard_normal(6)
        probes.append(taper * np.sum(amp[:, None] * np.exp(-(((x[None, :] - c[:, None]) / w[:, None]) ** 2)), axis=0))
    G = x_gram(norms).tocsc()
    lu = spla.splu(G)
    for frac in (0.0, 0.1, 0.25, 0.5):
        i = int(np.argmin(np.abs(r - frac * L)))
        e = np.zeros(grid.m)
        e[i] = 1.0
        probes.append(lu.solve(e))
    probes.extend(np.asarray(s, float) for s in snapshots if s is not None)
    return probes


def embedding_constant(norms: Norms, probes) -> float:
    best = 0.0
    for w in probes:
        nx = norm_X(norms, w)
        if nx > 0:
            best = max(best, norm_sup(w) / nx)
    return best


def compute_apriori(problem: Problem, grid: Grid, norms: Norms, mu: float,
                    snapshots: Sequence[np.ndarray] = (), lambda_star: Optional[float] = None,
                    safety: float = SAFETY) -> AprioriBound:
    """Branch-wide bound ``A = C_embed / S`` for points with ``λ >= mu``."""
    lam_star = lambda_star if lambda_star is not None else lambda_star_of(problem, grid.x)
    if not mu > lam_star:
        raise ValueError(f"mu={mu:.12g} must exceed lambda_*={lam_star:.12g}")
    S = amplitude_threshold(problem, grid.x)
    C = embedding_constant(norms, probe_functions(grid, norms, snapshots))
    A = apriori_constant(C, S) if math.isfinite(S) else 0.0
    finf = problem.finf(grid.x)
    at_least = finf >= mu
    N_mu = float(grid.radius[at_least].max()) if np.any(at_least) else 0.0
    return AprioriBound(mu=float(mu), S=S, C_embed=C, A=A, N_mu=N_mu, safety=safety)


# ---------------------------------------------------------------------------
# Branch-wide report
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    status: str
    detail: str = ""
    witness: Optional[dict] = None


@dataclass
class BranchReport:
    checks: Dict[str, CheckResult]
    lambda_star: float
    lambda_infinity: float
    apriori: Optional[AprioriBound] = None
    decay: List[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.status != FAIL for c in self.checks.values())

    def failures(self) -> List[str]:
        return [k for k, c in self.checks.items() if c.status == FAIL]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "lambda_star": self.lambda_star,
            "lambda_infinity": self.lambda_infinity,
            "checks": {k: asdict(c) for k, c in self.checks.items()},
            "apriori": self.apriori.to_dict() if self.apriori else None,
            "decay": self.decay,
        }

    def write(self, path):
        with open(path, "w", newline="\n") as fh:
            json.dump(jsonable(self.to_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")


def jsonable(obj):
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return jsonable(obj.item())
    return obj


def _check_range(lams, lam_star, lam_inf) -> CheckResult:
    bad = np.flatnonzero(~((lams > lam_star) & (lams <= lam_inf + 1e-10)))
    if bad.size:
        i = int(bad[0])
        return CheckResult(FAIL, f"lambda={lams[i]:.17g} outside ({lam_star:.17g}, {lam_inf:.17g}]",
                           {"point": i, "lambda": float(lams[i])})
    return CheckResult(PASS, f"{lams.size} points in ({lam_star:.12g}, {lam_inf:.12g}]")


def _check_sign(points, sign) -> CheckResult:
    for k, pt in enumerate(points):
        if pt.v is not None:
            bad = np.flatnonzero(~(sign * pt.v > 0))
            if bad.size:
                return CheckResult(FAIL, f"point {k} has a node of the wrong sign",
                                   {"point": k, "node": int(bad[0]), "value": float(pt.v[bad[0]])})
        elif pt.positive != (sign > 0):
            return CheckResult(FAIL, f"point {k} is flagged as not of one sign", {"point": k, "node": None})
    return CheckResult(PASS, f"all points have sign {sign:+d}")


def _check_away_from_zero(points, apriori: AprioriBound) -> CheckResult:
    sel = [(k, pt) for k, pt in enumerate(points) if pt.lam >= apriori.mu]
    if not sel:
        return CheckResult(NOT_EVALUATED, "no point with lambda >= mu")
    if apriori.A_safe <= 0:
        return CheckResult(NOT_EVALUATED, "threshold S is unbounded on the scan")
    k, worst = min(sel, key=lambda kp: kp[1].normX_u)
    lower = 1.0 / apriori.A_safe
    ok = worst.normX_u >= lower
    return CheckResult(PASS if ok else FAIL,
                       f"min ||u||_X = {worst.normX_u:.6g} vs 1/A = {lower:.6g} over {len(sel)} points",
                       {"point": k, "normX_u": worst.normX_u, "bound": lower})


def _check_blowup(lams, nv, lam_inf) -> CheckResult:
    order = np.argsort(-nv, kind="stable")
    q = order[-(len(order) // 4):] if len(order) >= 4 else order[:0]
    if q.size < 4:
        return CheckResult(NOT_EVALUATED, f"only {q.size} points in the last quartile")
    with np.errstate(divide="ignore"):
        rho = spearmanr(-np.log(nv[q]), -(lam_inf - lams[q])).statistic
    ok = bool(np.isfinite(rho) and rho >= SPEARMAN_MIN)
    return CheckResult(PASS if ok else FAIL, f"Spearman rho = {rho:.6f} over {q.size} points",
                       {"rho": float(rho), "points": [int(i) for i in q]})


def _check_decay_points(problem, grid, points, lam_star, epsilon_frac, n_sample=5):
    cand = [k for k, pt in enumerate(points) if pt.v is not None and pt.lam > lam_star]
    if not cand:
        return CheckResult(NOT_EVALUATED, "no stored solution values"), []
    picks = sorted({cand[int(round(t))] for t in np.linspace(0, len(cand) - 1, min(n_sample, len(cand)))})
    reports, failed, skipped = [], [], 0
    for k in picks:
        try:
            rep = check_decay(problem, points[k], epsilon_frac, grid=grid, lambda_star=lam_star)
        except TailTooShort:
            skipped += 1
            continue
        d = rep.to_dict()
        d["point"] = k
        d["lambda"] = points[k].lam
        reports.append(d)
        if not (rep.bound_ok and rep.rate_ok):
            failed.append(k)
    if not reports:
        return CheckResult(NOT_EVALUATED, "tail too short at every sampled point"), reports
    if failed:
        return CheckResult(FAIL, f"decay check failed at points {failed}", {"points": failed}), reports
    return CheckResult(PASS, f"bound and rate hold at {len(reports)} points ({skipped} skipped)"), reports


def check_branch(problem: Problem, branch: Branch, grid: Optional[Grid] = None,
                 norms: Optional[Norms] = None, *, epsilon_frac: float = 0.1,
                 mu: Optional[float] = None, lambda_star: Optional[float] = None,
                 lambda_infinity: Optional[float] = None) -> BranchReport:
    """Run the five branch checks.

    (a) λ within (λ*, λ∞]; (b) every node of the branch's sign; (c) ``‖u‖_X``
    at least ``1/A`` for points with ``λ >= mu``; (d) Spearman correlation of
    ``-log‖v‖_X`` and ``-(λ∞ - λ)`` over the quarter of points with the smallest
    ``‖v‖_X``; (e) decay bound at five sampled points.

    ``lambda_star``/``lambda_infinity`` default to the values stored on the
    branch; pass recomputed ones to check a branch against another problem.
    """
    if len(branch) == 0:
        raise ValueError("empty branch")
    grid = grid or make_grid(problem)
    norms = norms or make_norms(grid, problem.p)
    lam_star = lambda_star if lambda_star is not None else branch.lambda_star
    if lam_star is None or not math.isfinite(lam_star):
        lam_star = lambda_star_of(problem, grid.x)
    lam_inf = lambda_infinity if lambda_infinity is not None else branch.lambda_infinity
    if mu is None:
        mu = lam_star + 0.1 * (lam_inf - lam_star)

    pts = branch.points
    lams = branch.lambdas
    nv = branch.normX_v
    checks = {
        "lambda_range": _check_range(lams, lam_star, lam_inf),
        "sign_purity": _check_sign(pts, branch.sign),
    }
    apriori = None
    try:
        apriori = compute_apriori(problem, grid, norms, mu, [p.v for p in pts if p.v is not None], lam_star)
        checks["bounded_away"] = _check_away_from_zero(pts, apriori)
    except (NoThreshold, ValueError) as exc:
        checks["bounded_away"] = CheckResult(FAIL, str(exc))
    checks["blowup_correlation"] = _check_blowup(lams, nv, lam_inf)
    checks["decay"], decay = _check_decay_points(problem, grid, pts, lam_star, epsilon_frac)
    return BranchReport(checks=checks, lambda_star=lam_star, lambda_infinity=lam_inf,
                        apriori=apriori, decay=decay)
