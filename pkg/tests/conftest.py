"""Shared fixtures: the reference problem and its traced branches are expensive-ish, build once."""

import numpy as np
import pytest

from asymbif.continuation import trace
from asymbif.grid import make_grid, make_norms
from asymbif.problem import NonlinearitySpec, PotentialSpec, Problem, lambda_star_of, reference_problem
from asymbif.spectral import principal_eigenpair


def constant_problem(f0=0.2, finf=1.0, **kw):
    nl = NonlinearitySpec(f0=PotentialSpec.constant(f0), finf=PotentialSpec.constant(finf))
    return Problem(nonlinearity=nl, **kw)


class Setup:
    def __init__(self, problem):
        self.problem = problem
        self.grid = make_grid(problem)
        self.norms = make_norms(self.grid, problem.p)
        self.eig = principal_eigenpair(problem, self.grid, self.norms, problem.finf)
        self.lam_star = lambda_star_of(problem, self.grid.x)
        self.lam_inf = self.eig.lam


@pytest.fixture(scope="session")
def ref():
    return Setup(reference_problem())


@pytest.fixture(scope="session")
def branch_plus(ref):
    return trace(ref.problem, ref.grid, ref.norms, ref.eig, ref.lam_star, sign=1)


@pytest.fixture(scope="session")
def branch_minus(ref):
    return trace(ref.problem, ref.grid, ref.norms, ref.eig, ref.lam_star, sign=-1)


@pytest.fixture(scope="session")
def small():
    """Coarse reference grid for property tests."""
    return Setup(reference_problem(m=201))


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def smooth_field(grid, rng, k=5, positive=False):
    """Random tapered Gaussian mixture vanishing near the Dirichlet boundary."""
    c = rng.uniform(-grid.L / 3, grid.L / 3, k) if grid.geometry == "line" else rng.uniform(0, grid.L / 3, k)
    w = rng.uniform(0.7, 3.0, k)
    a = rng.uniform(0.2, 1.0, k) if positive else rng.standard_normal(k)
    taper = np.cos(0.5 * np.pi * grid.radius / grid.L)
    return taper * np.sum(a[:, None] * np.exp(-(((grid.x[None, :] - c[:, None]) / w[:, None]) ** 2)), axis=0)
