import json

import numpy as np
import pytest

from asymbif.grid import make_grid, make_norms, norm_Lp
from asymbif.problem import PotentialSpec, reference_problem
from asymbif.spectral import (
    check_f6,
    dense_principal_eigenvalue,
    principal_eigenpair,
    principal_eigenvalue_L0,
    write_eigenpair,
)

from conftest import Setup, constant_problem


def eig_for(potential, L=20.0, m=1999, geometry="line", N=1):
    P = reference_problem(L=L, m=m, geometry=geometry, N=N)
    g = make_grid(P)
    n = make_norms(g, 2)
    return P, g, n, principal_eigenpair(P, g, n, potential)


def dirichlet_line_eigenvalue(c, L, m):
    """Exact top eigenvalue of the discrete Dirichlet Laplacian plus c."""
    h = 2 * L / (m + 1)
    return c - 4 / h**2 * np.sin(np.pi * h / (4 * L)) ** 2


def test_zero_potential_closed_form():
    _, g, _, e = eig_for(PotentialSpec.constant(0.0), L=10.0, m=999)
    assert e.lam == pytest.approx(-(np.pi / 20) ** 2, rel=1e-5)
    assert e.lam == pytest.approx(dirichlet_line_eigenvalue(0.0, 10.0, 999), rel=1e-10)
    mode = np.cos(np.pi * g.x / 20)
    np.testing.assert_allclose(e.phi / e.phi.max(), mode / mode.max(), atol=1e-9)


def test_constant_shift():
    _, _, _, e0 = eig_for(PotentialSpec.constant(0.0), m=401)
    _, _, _, e1 = eig_for(PotentialSpec.constant(0.75), m=401)
    assert e1.lam - e0.lam == pytest.approx(0.75, abs=1e-12)
    np.testing.assert_allclose(e1.phi, e0.phi, atol=1e-12)


def test_reference_eigenpair_invariants(ref):
    e = ref.eig
    assert 1.0 < e.lam < 1.5
    assert norm_Lp(ref.norms, e.phi, p=2) == pytest.approx(1.0, abs=1e-12)
    assert e.positive and np.all(e.phi > 0)
    assert e.residual <= 1e-10 * max(1.0, abs(e.lam))
    assert e.gap > 0


def test_coarse_dense_oracle():
    P, g, _, e = eig_for(reference_problem().finf, m=201)
    assert e.lam == pytest.approx(dense_principal_eigenvalue(g, P.finf(g.x)), rel=1e-8)


def test_radial_dense_oracle():
    V = PotentialSpec.gaussian(1.0, [(0.5, 0.0, 1.0)])
    _, g, _, e = eig_for(V, L=8.0, m=150, geometry="radial", N=3)
    assert e.lam == pytest.approx(dense_principal_eigenvalue(g, V(g.x)), rel=1e-10)
    assert e.positive


def test_f6_gate(ref):
    assert check_f6(ref.problem, ref.eig, ref.grid)
    flat = Setup(constant_problem(f0=0.2, finf=1.0, m=999))
    assert flat.lam_inf == pytest.approx(dirichlet_line_eigenvalue(1.0, 20.0, 999), rel=1e-12)
    assert not check_f6(flat.problem, flat.eig, flat.grid)


def test_f6_fails_for_negative_dip():
    from asymbif.problem import NonlinearitySpec, Problem

    nl = NonlinearitySpec(f0=PotentialSpec.constant(0.2), finf=PotentialSpec.gaussian(1.0, [(-0.3, 0.0, 1.0)]))
    s = Setup(Problem(nonlinearity=nl, m=999))
    assert not check_f6(s.problem, s.eig, s.grid)


def test_L0_eigenvalues():
    flat = constant_problem(f0=0.2, finf=1.0, m=1999)
    g = make_grid(flat)
    n = make_norms(g, 2)
    assert principal_eigenvalue_L0(flat, g, n) == pytest.approx(0.2 - (np.pi / 40) ** 2, rel=1e-5)
    zero = constant_problem(f0=0.0, finf=1.0, m=1999)
    assert principal_eigenvalue_L0(zero, g, n) == pytest.approx(-(np.pi / 40) ** 2, rel=1e-5)
    P = reference_problem(m=201)
    gc = make_grid(P)
    lam0 = principal_eigenvalue_L0(P, gc, make_norms(gc, 2))
    assert 0.2 < lam0 < 0.3
    assert lam0 == pytest.approx(dense_principal_eigenvalue(gc, P.f0(gc.x)), rel=1e-8)


@pytest.mark.parametrize("amp", [0.05, 0.2, 0.6])
def test_eigenvalue_monotone_in_potential(amp):
    base = reference_problem().finf
    bigger = PotentialSpec.gaussian(1.0, [(0.5, 0.0, 1.0), (amp, 2.0, 1.5)])
    _, _, _, e0 = eig_for(base, m=401)
    _, _, _, e1 = eig_for(bigger, m=401)
    assert e1.lam >= e0.lam


def test_domain_convergence(ref):
    lams = []
    for L in (10.0, 20.0, 40.0):
        m = int(round(L / 20 * 2000)) - 1  # constant h
        lams.append(eig_for(ref.problem.finf, L=L, m=m)[3].lam)
    assert lams[0] <= lams[1] <= lams[2]
    assert abs(lams[2] - lams[1]) < 1e-6


def test_write_eigenpair(tmp_path, small):
    write_eigenpair(tmp_path / "e.csv", tmp_path / "e.json", small.grid, small.eig, {"lambda_star": 1.0})
    meta = json.loads((tmp_path / "e.json").read_text())
    assert meta["lambda"] == small.eig.lam and meta["lambda_star"] == 1.0
    assert (tmp_path / "e.csv").read_text().count("\n") == small.grid.m + 2
