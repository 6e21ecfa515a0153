"""Problem data: potentials, the asymptotically linear nonlinearity, hypothesis checks.

The nonlinearity interpolates between a small-amplitude potential ``f0`` and a
large-amplitude potential ``finf``::

    f(x, s) = (1 - theta(s)) * f0(x) + theta(s) * finf(x)

with ``theta(0) = 0``, ``theta(+-inf) = 1``. The built-in form uses
``theta(s) = t / (1 + t)``, ``t = (|s| / scale) ** power``; ``scale = power = 1``
gives the classical ``f0 / (1 + s) + s finf / (1 + s)`` example, extended evenly
to ``s < 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

TOL_STRICT = 1e-12


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bump:
    amplitude: float
    center: float
    width: float


@dataclass(frozen=True)
class PotentialSpec:
    """A bounded real potential, evaluated at coordinates ``x`` (line) or ``r`` (radial).

    ``kind`` is one of ``"constant"``, ``"gaussian-bump-sum"`` or ``"tabulated"``.
    Gaussian bumps are ``a * exp(-((x - c) / w) ** 2)`` on top of ``baseline``.
    Tabulated potentials interpolate linearly and extrapolate by the end values.
    """

    kind: str
    value: float = 0.0
    baseline: float = 0.0
    bumps: tuple[Bump, ...] = ()
    nodes: tuple[float, ...] = ()
    samples: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("constant", "gaussian-bump-sum", "tabulated"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "tabulated":
            if len(self.nodes) < 2 or len(self.nodes) != len(self.samples):
                raise ValueError("tabulated potential needs >= 2 nodes with matching samples")
            if not np.all(np.isfinite(self.samples)) or not np.all(np.isfinite(self.nodes)):
                raise ValueError("tabulated potential samples must be finite")
            if np.any(np.diff(self.nodes) <= 0):
                raise ValueError("tabulated nodes must be strictly increasing")
        for b in self.bumps:
            if b.width <= 0:
                raise ValueError("gaussian bump width must be positive")

    @classmethod
    def constant(cls, c: float) -> "PotentialSpec":
        return cls(kind="constant", value=float(c))

    @classmethod
    def gaussian(cls, baseline: float, bumps) -> "PotentialSpec":
        bumps = tuple(b if isinstance(b, Bump) else Bump(*map(float, b)) for b in bumps)
        return cls(kind="gaussian-bump-sum", baseline=float(baseline), bumps=bumps)

    @classmethod
    def tabulated(cls, nodes, samples) -> "PotentialSpec":
        return cls(
            kind="tabulated",
            nodes=tuple(float(t) for t in nodes),
            samples=tuple(float(t) for t in samples),
        )

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full_like(x, self.value)
        if self.kind == "gaussian-bump-sum":
            out = np.full_like(x, self.baseline)
            for b in self.bumps:
                out = out + b.amplitude * np.exp(-(((x - b.center) / b.width) ** 2))
            return out
        return np.interp(x, self.nodes, self.samples)

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "gaussian-bump-sum":
            return {
                "kind": "gaussian-bump-sum",
                "baseline": self.baseline,
                "bumps": [
                    {"amplitude": b.amplitude, "center": b.center, "width": b.width}
                    for b in self.bumps
                ],
            }
        return {"kind": "tabulated", "nodes": list(self.nodes), "samples": list(self.samples)}

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        kind = d.get("kind")
        allowed = {
            "constant": {"kind", "value"},
            "gaussian-bump-sum": {"kind", "baseline", "bumps"},
            "tabulated": {"kind", "nodes", "samples"},
        }
        if kind not in allowed:
            raise ConfigError(f"unknown potential kind {kind!r}")
        _reject_unknown(d, allowed[kind], f"potential[{kind}]")
        if kind == "constant":
            return cls.constant(_num(d, "value"))
        if kind == "gaussian-bump-sum":
            bumps = []
            for b in d.get("bumps", []):
                _reject_unknown(b, {"amplitude", "center", "width"}, "bump")
                bumps.append(Bump(_num(b, "amplitude"), float(b.get("center", 0.0)), _num(b, "width")))
            return cls.gaussian(float(d.get("baseline", 0.0)), bumps)
        return cls.tabulated(d["nodes"], d["samples"])


# ---------------------------------------------------------------------------
# Nonlinearity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NonlinearitySpec:
    """Interpolating nonlinearity between ``f0`` and ``finf``.

    ``form="rational"`` fixes ``scale = power = 1``. ``form="custom-rational"``
    uses the given ``scale`` and ``power``. Passing ``theta``/``dtheta`` callables
    overrides the weight entirely (Python API only; not serializable).
    """

    f0: PotentialSpec
    finf: PotentialSpec
    form: str = "rational"
    scale: float = 1.0
    power: float = 1.0
    theta: Optional[Callable] = field(default=None, compare=False)
    dtheta: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.form not in ("rational", "custom-rational"):
            raise ValueError(f"unknown nonlinearity form {self.form!r}")
        if self.form == "rational" and (self.scale != 1.0 or self.power != 1.0):
            raise ValueError("rational form has scale = power = 1")
        if self.scale <= 0 or self.power <= 0:
            raise ValueError("scale and power must be positive")
        if (self.theta is None) != (self.dtheta is None):
            raise ValueError("theta and dtheta must be given together")

    def weight(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.theta is not None:
            return np.asarray(self.theta(s), dtype=float)
        t = (np.abs(s) / self.scale) ** self.power
        return t / (1.0 + t)

    def coweight(self, s) -> np.ndarray:
        """1 - theta(s), without cancellation for large |s|."""
        s = np.asarray(s, dtype=float)
        if self.theta is not None:
            return 1.0 - np.asarray(self.theta(s), dtype=float)
        return 1.0 / (1.0 + (np.abs(s) / self.scale) ** self.power)

    def dweight(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.dtheta is not None:
            return np.asarray(self.dtheta(s), dtype=float)
        a = np.abs(s) / self.scale
        t = a**self.power
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.power == 1.0:
                da = np.ones_like(a)
            else:
                da = self.power * a ** (self.power - 1.0)
        dt = da / self.scale / (1.0 + t) ** 2
        dt = np.where(np.isfinite(dt), dt, 0.0)
        return np.sign(s) * dt

    def to_dict(self) -> dict:
        if self.theta is not None:
            raise ValueError("callable weights cannot be serialized")
        d = {"form": self.form, "f0": self.f0.to_dict(), "finf": self.finf.to_dict()}
        if self.form == "custom-rational":
            d.update(scale=self.scale, power=self.power)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NonlinearitySpec":
        form = d.get("form", "rational")
        keys = {"form", "f0", "finf"}
        if form == "custom-rational":
            keys |= {"scale", "power"}
        _reject_unknown(d, keys, "nonlinearity")
        for k in ("f0", "finf"):
            if k not in d:
                raise ConfigError(f"nonlinearity is missing {k!r}")
        try:
            return cls(
                f0=PotentialSpec.from_dict(d["f0"]),
                finf=PotentialSpec.from_dict(d["finf"]),
                form=form,
                scale=float(d.get("scale", 1.0)),
                power=float(d.get("power", 1.0)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class Problem:
    nonlinearity: NonlinearitySpec
    N: int = 1
    geometry: str = "line"
    p: float = 2.0
    L: float = 20.0
    m: int = 1999
    lambda_star: Optional[float] = None
    delta: float = 0.1

    def __post_init__(self):
        if self.geometry not in ("line", "radial"):
            raise ValueError(f"geometry must be 'line' or 'radial', got {self.geometry!r}")
        if self.N < 1:
            raise ValueError("dimension N must be positive")
        if self.geometry == "line" and self.N != 1:
            raise ValueError("line geometry requires N = 1")
        if self.geometry == "radial" and self.N < 2:
            raise ValueError("radial geometry requires N >= 2 (use 'line' for N = 1)")
        if not (self.p >= 2 and self.p > self.N / 2):
            raise ValueError(f"exponent p must satisfy p >= 2 and p > N/2, got p={self.p}")
        if self.L <= 0:
            raise ValueError("truncation radius L must be positive")
        if self.m < 16:
            raise ValueError("grid size m must be at least 16")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @property
    def f0(self) -> PotentialSpec:
        return self.nonlinearity.f0

    @property
    def finf(self) -> PotentialSpec:
        return self.nonlinearity.finf

    def with_overrides(self, **kw) -> "Problem":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update({k: v for k, v in kw.items() if v is not None})
        return Problem(**d)

    def to_dict(self) -> dict:
        return {
            "nonlinearity": self.nonlinearity.to_dict(),
            "N": self.N,
            "geometry": self.geometry,
            "p": self.p,
            "L": self.L,
            "m": self.m,
            "lambda_star": self.lambda_star,
            "delta": self.delta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Problem":
        _reject_unknown(d, {"nonlinearity", "N", "geometry", "p", "L", "m", "lambda_star", "delta"}, "problem")
        if "nonlinearity" not in d:
            raise ConfigError("problem is missing 'nonlinearity'")
        ls = d.get("lambda_star")
        try:
            return cls(
                nonlinearity=NonlinearitySpec.from_dict(d["nonlinearity"]),
                N=int(d.get("N", 1)),
                geometry=str(d.get("geometry", "line")),
                p=float(d.get("p", 2.0)),
                L=float(d.get("L", 20.0)),
                m=int(d.get("m", 1999)),
                lambda_star=None if ls is None else float(ls),
                delta=float(d.get("delta", 0.1)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


class ConfigError(ValueError):
    pass


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {sorted(extra)}")


def _num(d, key):
    if key not in d:
        raise ConfigError(f"missing field {key!r}")
    return float(d[key])


def load_problem(path) -> Problem:
    """Read a problem configuration from a JSON file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return Problem.from_dict(data)


def reference_problem(**overrides) -> Problem:
    """The desk-scale reference instance used throughout the tests."""
    nl = NonlinearitySpec(
        f0=PotentialSpec.gaussian(0.2, [(0.1, 0.0, 2.0)]),
        finf=PotentialSpec.gaussian(1.0, [(0.5, 0.0, 1.0)]),
    )
    base = Problem(nonlinearity=nl, N=1, geometry="line", p=2.0, L=20.0, m=1999, delta=0.1)
    return base.with_overrides(**overrides) if overrides else base


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate_f(problem: Problem, x, s):
    """f(x, s); broadcasts over ``x`` and ``s``."""
    nl = problem.nonlinearity
    th = nl.weight(s)
    return (1.0 - th) * nl.f0(x) + th * nl.finf(x)


def evaluate_g(problem: Problem, x, s):
    """g(x, s) = f(x, s) - finf(x) = (1 - theta(s)) (f0(x) - finf(x))."""
    nl = problem.nonlinearity
    return nl.coweight(s) * (nl.f0(x) - nl.finf(x))


def evaluate_dfds(problem: Problem, x, s):
    """Partial derivative of f (equivalently g) in s."""
    nl = problem.nonlinearity
    return nl.dweight(s) * (nl.finf(x) - nl.f0(x))


# ---------------------------------------------------------------------------
# Hypothesis validation
# ---------------------------------------------------------------------------

VERIFIED = "verified-on-lattice"
VIOLATED = "violated"
NOT_CHECKABLE = "not-checkable"


@dataclass
class HypothesisStatus:
    status: str
    witness: Optional[tuple] = None
    detail: str = ""

    def to_dict(self):
        return {"status": self.status, "witness": self.witness, "detail": self.detail}


@dataclass
class HypothesisReport:
    statuses: dict
    lambda_star_estimate: float
    sup_dfds: float

    @property
    def all_verified(self) -> bool:
        return all(st.status != VIOLATED for st in self.statuses.values())

    def to_dict(self):
        return {
            "statuses": {k: v.to_dict() for k, v in self.statuses.items()},
            "lambda_star_estimate": self.lambda_star_estimate,
            "sup_dfds": self.sup_dfds,
        }


def estimate_lambda_star(problem: Problem, x: np.ndarray) -> float:
    """Max of finf over the outer 10% shell of the sampled domain."""
    x = np.asarray(x, dtype=float)
    shell = np.abs(x) >= 0.9 * problem.L
    if not shell.any():
        raise ValueError("no grid nodes in the outer shell")
    return float(np.max(problem.finf(x[shell])))


def lambda_star_of(problem: Problem, x: np.ndarray) -> float:
    if problem.lambda_star is not None:
        return problem.lambda_star
    return estimate_lambda_star(problem, x)


def validation_lattice(problem: Problem, density: int):
    """(x, s) samples: ``8 * density`` spatial nodes and as many signed amplitudes."""
    from .grid import make_grid

    grid = make_grid(problem)
    nx = min(8 * density, grid.m)
    idx = np.unique(np.linspace(0, grid.m - 1, nx).round().astype(int))
    xs = grid.x[idx]
    half = max(4 * density, 4)
    mags = np.logspace(-6, 3, half)
    ss = np.concatenate([-mags[::-1], [0.0], mags])
    return grid, xs, ss


def validate_hypotheses(problem: Problem, lattice_density: int = 8) -> HypothesisReport:
    if lattice_density < 8:
        raise ValueError("lattice density must be at least 8")
    grid, xs, ss = validation_lattice(problem, lattice_density)
    if xs.size == 0:
        raise ValueError("empty grid")
    X, S = np.meshgrid(xs, ss, indexing="ij")
    F = evaluate_f(problem, X, S)
    f0 = problem.f0(xs)
    finf = problem.finf(xs)
    st = {}

    if np.all(np.isfinite(F)):
        st["f1"] = HypothesisStatus(VERIFIED, detail=f"f bounded on lattice, max|f| = {np.max(np.abs(F)):.6g}")
    else:
        i, j = np.argwhere(~np.isfinite(F))[0]
        st["f1"] = HypothesisStatus(VIOLATED, (float(xs[i]), float(ss[j])), "non-finite value")

    # (f2): f(x,0) = f0 and continuity at s = 0
    f_at0 = evaluate_f(problem, xs, 0.0)
    small = max(np.max(np.abs(evaluate_f(problem, xs, sg * 1e-9) - f0)) for sg in (1.0, -1.0))
    err0 = np.abs(f_at0 - f0)
    if err0.max() > TOL_STRICT:
        i = int(np.argmax(err0))
        st["f2"] = HypothesisStatus(VIOLATED, (float(xs[i]), 0.0), "f(x,0) != f0(x)")
    elif small > 1e-6:
        st["f2"] = HypothesisStatus(VIOLATED, (float(xs[0]), 1e-9), "f(x,s) does not approach f0 as s -> 0")
    else:
        st["f2"] = HypothesisStatus(VERIFIED)

    # (f3): limit at large |s|, strict gap f0 + delta < lambda_*
    lam_est = estimate_lambda_star(problem, grid.x)
    lam_star = problem.lambda_star if problem.lambda_star is not None else lam_est
    far = max(np.max(np.abs(evaluate_f(problem, xs, sg * 1e6) - finf)) for sg in (1.0, -1.0))
    gap = lam_star - (f0 + problem.delta)
    pos = f0 + problem.delta
    if far > 1e-5:
        st["f3"] = HypothesisStatus(VIOLATED, (float(xs[0]), 1e6), f"|f(x,1e6) - finf| = {far:.3g}")
    elif gap.min() <= TOL_STRICT:
        i = int(np.argmin(gap))
        st["f3"] = HypothesisStatus(VIOLATED, (float(xs[i]), 0.0), "f0 + delta >= lambda_*")
    elif pos.min() <= 0:
        i = int(np.argmin(pos))
        st["f3"] = HypothesisStatus(VIOLATED, (float(xs[i]), 0.0), "f0 + delta <= 0")
    else:
        st["f3"] = HypothesisStatus(VERIFIED, detail=f"lambda_* = {lam_star:.12g}")

    # (f4): 0 <= f <= finf
    over = F - finf[:, None]
    under = -F
    worst = np.maximum(over, under)
    if worst.max() > TOL_STRICT:
        i, j = np.unravel_index(int(np.argmax(worst)), worst.shape)
        st["f4"] = HypothesisStatus(VIOLATED, (float(xs[i]), float(ss[j])), "0 <= f <= finf fails")
    else:
        st["f4"] = HypothesisStatus(VERIFIED)

    # (f5): finite-difference bound on the s-derivative
    hs = 1e-6 * np.maximum(1.0, np.abs(S))
    dF = (evaluate_f(problem, X, S + hs) - evaluate_f(problem, X, S - hs)) / (2 * hs)
    sup_df = float(np.max(np.abs(dF)))
    if np.isfinite(sup_df):
        st["f5"] = HypothesisStatus(VERIFIED, detail=f"sup |d2 f| ~ {sup_df:.6g}")
    else:
        i, j = np.argwhere(~np.isfinite(dF))[0]
        st["f5"] = HypothesisStatus(VIOLATED, (float(xs[i]), float(ss[j])), "unbounded s-derivative")

    st["f6"] = HypothesisStatus(NOT_CHECKABLE, detail="checked by the spectral module")
    return HypothesisReport(statuses=st, lambda_star_estimate=lam_est, sup_dfds=sup_df)
