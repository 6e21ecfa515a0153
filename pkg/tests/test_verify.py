import copy
import json
import math

import numpy as np
import pytest

from asymbif.continuation import Branch, BranchPoint
from asymbif.grid import make_grid, make_norms, norm_X
from asymbif.problem import NonlinearitySpec, PotentialSpec, Problem
from asymbif.verify import (
    FAIL,
    NOT_EVALUATED,
    PASS,
    NoThreshold,
    TailTooShort,
    amplitude_threshold,
    apriori_constant,
    check_branch,
    check_decay,
    compute_apriori,
    embedding_constant,
    probe_functions,
)

from conftest import constant_problem


def test_rate_arithmetic(small):
    # lambda = 2, lambda_* = 1, eps = 0.5
    v = np.exp(-np.abs(small.grid.x))
    rep = check_decay(small.problem, (2.0, v), 0.5, grid=small.grid, lambda_star=1.0)
    assert rep.epsilon == 0.5 and rep.eta == 0.5
    assert rep.predicted_rate == pytest.approx(0.70710678, abs=1e-8)


def _saturating(grid, lam, lam_star, C, vmax=3.0):
    eta = 0.9 * (lam - lam_star)
    return vmax * np.minimum(1.0, np.exp(-math.sqrt(eta) * (grid.radius - C)))


def test_saturated_bound(small):
    lam, lam_star = 1.1, 1.0
    rep0 = check_decay(small.problem, (lam, np.ones(small.grid.m)), 0.1, grid=small.grid, lambda_star=lam_star)
    v = _saturating(small.grid, lam, lam_star, rep0.C_eps)
    rep = check_decay(small.problem, (lam, v), 0.1, grid=small.grid, lambda_star=lam_star)
    assert rep.bound_ok
    assert abs(rep.worst_margin) <= 1e-12
    assert rep.fitted_rate == pytest.approx(rep.predicted_rate, rel=1e-10)


def test_bound_violation_detected(small):
    lam, lam_star = 1.1, 1.0
    v = np.exp(-0.01 * np.abs(small.grid.x))  # decays far too slowly
    rep = check_decay(small.problem, (lam, v), 0.1, grid=small.grid, lambda_star=lam_star)
    assert not rep.bound_ok and not rep.rate_ok
    assert np.abs(small.grid.x[rep.worst_node]) > rep.C_eps


def test_decay_scale_invariant(ref, branch_plus):
    pt = branch_plus.points[len(branch_plus) // 2]
    a = check_decay(ref.problem, pt, 0.1, grid=ref.grid, lambda_star=ref.lam_star)
    b = check_decay(ref.problem, (pt.lam, 7 * pt.v), 0.1, grid=ref.grid, lambda_star=ref.lam_star)
    assert a.bound_ok == b.bound_ok
    assert a.fitted_rate == pytest.approx(b.fitted_rate, rel=1e-12)


def test_decay_reference_midpoint(ref, branch_plus):
    lam_mid = 0.5 * (ref.lam_star + ref.lam_inf)
    k = int(np.argmin(np.abs(branch_plus.lambdas - lam_mid)))
    rep = check_decay(ref.problem, branch_plus.points[k], 0.1, grid=ref.grid, lambda_star=ref.lam_star)
    assert rep.eta > 0
    assert rep.bound_ok
    assert rep.fitted_rate >= math.sqrt(rep.eta) - 0.05


def test_tail_too_short(small):
    P = Problem(nonlinearity=NonlinearitySpec(f0=PotentialSpec.constant(0.2),
                                              finf=PotentialSpec.gaussian(1.0, [(0.5, 0.0, 8.0)])),
                L=20.0, m=201)
    g = make_grid(P)
    with pytest.raises(TailTooShort):
        check_decay(P, (1.001, np.ones(g.m)), 0.1, grid=g, lambda_star=1.0)


def test_decay_needs_lambda_above_edge(small):
    with pytest.raises(ValueError):
        check_decay(small.problem, (0.9, np.ones(small.grid.m)), 0.1, grid=small.grid, lambda_star=1.0)


def test_threshold_constant_example_solves_scalar_equation():
    # 0.2/(1+S) + S/(1+S) = 0.3  ->  0.7 S = 0.1
    P = constant_problem()
    S = amplitude_threshold(P, np.linspace(-1, 1, 5))
    assert S == pytest.approx(1 / 7, abs=1e-10)
    f = (0.2 + S) / (1 + S)
    assert f == pytest.approx(0.3, abs=1e-12)


def test_threshold_is_one_when_f_flat_below_one():
    nl = NonlinearitySpec(f0=PotentialSpec.constant(0.2), finf=PotentialSpec.constant(1.0),
                          theta=lambda s: np.where(np.abs(s) < 1, 0.0, 1.0),
                          dtheta=lambda s: np.zeros_like(s))
    P = Problem(nonlinearity=nl)
    # f = f0 for |s| < 1, f = 1 beyond, so the threshold is exactly 1
    assert amplitude_threshold(P, np.zeros(3)) == pytest.approx(1.0, abs=1e-12)


def test_no_threshold():
    nl = NonlinearitySpec(f0=PotentialSpec.constant(0.2), finf=PotentialSpec.constant(1.0),
                          theta=lambda s: np.full_like(s, 0.5), dtheta=lambda s: np.zeros_like(s))
    with pytest.raises(NoThreshold):
        amplitude_threshold(Problem(nonlinearity=nl), np.zeros(3))


def test_apriori_constant_scaling():
    A = apriori_constant(0.6, 0.1)
    assert apriori_constant(0.6, 0.05) >= A
    assert apriori_constant(1.2, 0.1) == pytest.approx(2 * A)


def test_embedding_constant_positive_and_probe_max(small):
    probes = probe_functions(small.grid, small.norms)
    C = embedding_constant(small.norms, probes)
    assert C > 0
    for w in probes:
        assert np.abs(w).max() <= C * norm_X(small.norms, w) * (1 + 1e-12)


def test_green_probe_is_exact_for_p2(small):
    # sup_w |w_i| / ||w||_X = sqrt((G^-1)_ii) at the probed node
    from asymbif.grid import x_gram

    G = x_gram(small.norms).toarray()
    i = int(np.argmin(np.abs(small.grid.x)))
    exact = math.sqrt(np.linalg.inv(G)[i, i])
    assert embedding_constant(small.norms, probe_functions(small.grid, small.norms)) >= exact * (1 - 1e-10)


def test_apriori_reference(ref, branch_plus):
    mu = ref.lam_star + 0.1 * (ref.lam_inf - ref.lam_star)
    ab = compute_apriori(ref.problem, ref.grid, ref.norms, mu, [p.v for p in branch_plus.points])
    assert ab.A > 0 and ab.S > 0
    # f0 + theta (finf - f0) <= f0 + 0.1 is tightest at x = 0 where finf - f0 = 1.2
    assert ab.S == pytest.approx(1 / 11, rel=1e-10)
    assert 0 < ab.N_mu < ref.grid.L
    for p in branch_plus.points:
        if p.lam >= mu:
            assert p.normX_v <= ab.A
            assert p.normX_u >= 1 / ab.A


def test_apriori_requires_mu_above_edge(small):
    with pytest.raises(ValueError):
        compute_apriori(small.problem, small.grid, small.norms, small.lam_star - 0.1)


def test_check_branch_reference(ref, branch_plus):
    rep = check_branch(ref.problem, branch_plus, ref.grid, ref.norms)
    assert {k: c.status for k, c in rep.checks.items()} == {
        "lambda_range": PASS, "sign_purity": PASS, "bounded_away": PASS,
        "blowup_correlation": PASS, "decay": PASS,
    }
    assert rep.passed and len(rep.decay) == 5
    json.dumps(rep.to_dict())


def test_check_branch_three_points(ref, branch_plus):
    b = copy.copy(branch_plus)
    b.points = branch_plus.points[:3]
    rep = check_branch(ref.problem, b, ref.grid, ref.norms)
    for k in ("lambda_range", "sign_purity", "bounded_away"):
        assert rep.checks[k].status == PASS
    assert rep.checks["blowup_correlation"].status == NOT_EVALUATED
    assert rep.passed


def test_check_branch_sign_flip(ref, branch_plus):
    b = copy.copy(branch_plus)
    b.points = list(branch_plus.points)
    k = 7
    v = b.points[k].v.copy()
    v[123] = -v[123]
    b.points[k] = BranchPoint(**{**b.points[k].__dict__, "v": v})
    rep = check_branch(ref.problem, b, ref.grid, ref.norms)
    assert rep.checks["sign_purity"].status == FAIL
    assert rep.checks["sign_purity"].witness == {"point": k, "node": 123, "value": v[123]}
    assert not rep.passed


def test_check_branch_range_against_other_problem(ref, branch_plus):
    rep = check_branch(ref.problem, branch_plus, ref.grid, ref.norms, lambda_infinity=ref.lam_inf - 0.05)
    assert rep.checks["lambda_range"].status == FAIL
    assert rep.checks["lambda_range"].witness["point"] == 0


def test_check_branch_without_solution_values(ref, branch_plus):
    pts = [BranchPoint(**{**p.__dict__, "v": None, "u": None}) for p in branch_plus.points]
    b = Branch(sign=1, truncation_n=None, points=pts, lambda_infinity=ref.lam_inf, lambda_star=ref.lam_star)
    rep = check_branch(ref.problem, b, ref.grid, ref.norms)
    assert rep.checks["decay"].status == NOT_EVALUATED
    assert rep.checks["sign_purity"].status == PASS
    assert rep.passed


def test_empty_branch_rejected(ref):
    with pytest.raises(ValueError):
        check_branch(ref.problem, Branch(sign=1, truncation_n=None), ref.grid, ref.norms)
