import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import expectation_pdr
from twostage_dro.ambiguity import AmbiguityParameters
from twostage_dro.evalsuite import empirical_cvar, evaluate_second_stage
from twostage_dro.geometry import SupportCone, build_box_support, build_partition
from twostage_dro.modeling import Model
from twostage_dro.reformulate import (
    ExtendedSystem,
    TwoStageProblem,
    build_pdr_cop,
    check_complete_recourse,
    delta_expr,
    delta_matrix,
    extend_system,
    solve_pdr,
)
from twostage_dro import instances


def test_extended_rows(case_factory):
    problem = case_factory(N=2)[0]
    sys_ = extend_system(problem)
    L = problem.L
    assert sys_.size == L + 2
    np.testing.assert_array_equal(sys_.W[:L], problem.W)
    np.testing.assert_array_equal(sys_.T0[:L], problem.T0)
    assert not np.any(sys_.W[L]) and not np.any(sys_.T0[L])
    assert (sys_.lam[L], sys_.kap[L]) == (1.0, 0.0)
    np.testing.assert_array_equal(sys_.W[L + 1], -problem.D)
    assert (sys_.lam[L + 1], sys_.kap[L + 1]) == (1.0, 1.0)
    assert sys_.active_rows(1.0) == [l for l in range(L + 2) if l != L]


def scalar_system(W, T, lam):
    return ExtendedSystem(np.array([[T]]), np.zeros((1, 1, 0)), np.array([[[W]]]),
                          np.array([lam]), np.zeros(1), 0)


def test_delta_scalar_case():
    out = delta_matrix(0, np.zeros(0), np.array([[3.0]]), np.zeros((1, 1)), scalar_system(2.0, 1.0, 0.0))
    np.testing.assert_allclose(out, [[5.0]])


def test_delta_zero_inputs(case_factory):
    problem = case_factory(N=2)[0]
    sys_ = extend_system(problem)
    n = problem.support.dim
    zero = delta_matrix(problem.L, np.zeros(problem.N1), np.zeros((problem.N2, n)), np.zeros((n, n)), sys_)
    assert not np.any(zero)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_delta_symmetric_and_matches_expression(seed):
    rng = np.random.default_rng(seed)
    problem = instances.newsvendor(2)
    sys_ = extend_system(problem)
    n = problem.support.dim
    l = int(rng.integers(sys_.size))
    x = rng.normal(size=problem.N1)
    Y = rng.normal(size=(problem.N2, n))
    Q = rng.normal(size=(n, n))
    Q = Q + Q.T
    D = delta_matrix(l, x, Y, Q, sys_)
    np.testing.assert_allclose(D, D.T)
    m = Model()
    xv, Yv, Qv = m.variable(problem.N1), m.variable((problem.N2, n)), m.symmetric(n)
    flat = np.concatenate([x, Y.ravel(), Q[np.tril_indices(n)]])
    np.testing.assert_allclose(delta_expr(l, xv, Yv, Qv, sys_).value(flat), D, atol=1e-10)


@pytest.mark.parametrize("delta,per_cell", [(0.1, 3), (1.0, 2)])
def test_requirement_count(case_factory, delta, per_cell):
    problem, scheme, amb, _ = case_factory(N=3, delta=delta)
    build = build_pdr_cop(problem, scheme, amb)
    assert len(build.requirements) == (problem.L + per_cell) * scheme.K
    assert (build.theta is None) == (delta == 1.0)


def test_zero_gamma_uses_empirical_weights(case_factory):
    problem, scheme, amb, _ = case_factory(N=3, eps=0.2)
    build = build_pdr_cop(problem, scheme, amb)
    assert build.chi2.omega is None
    sol = solve_pdr(problem, scheme, amb, "ia0")
    expected = problem.c @ sol.x + sol.theta + scheme.p_hat @ sol.s / problem.delta
    assert sol.objective == pytest.approx(expected, rel=1e-6)


def test_chi2_objective_pieces(case_factory):
    problem, scheme, _, _ = case_factory(N=3)
    amb = AmbiguityParameters(np.full(scheme.K, 0.3), 0.2)
    sol = solve_pdr(problem, scheme, amb, "ia0")
    expected = problem.c @ sol.x + sol.theta + sol.ambiguity_objective(scheme.p_hat, 0.2) / problem.delta
    assert sol.objective == pytest.approx(expected, rel=1e-6)


@pytest.mark.parametrize("family,M", [("newsvendor", 1), ("medical", 2)])
def test_delta_one_matches_direct_expectation(case_factory, family, M):
    problem, scheme, amb, _ = case_factory(family, seed=2, N=3, M=M, eps=0.5, delta=1.0)
    ref, _, status = expectation_pdr(problem, scheme, amb)
    assert status == "optimal"
    sol = solve_pdr(problem, scheme, amb, "ia0")
    assert sol.objective == pytest.approx(ref, rel=1e-6)


def test_zero_cost_recourse_gives_first_stage_cost():
    support = build_box_support([0.0], [1.0])
    W = np.zeros((1, 1, 2))
    W[0, 0, 1] = 1.0
    problem = TwoStageProblem(c=[2.0], D=np.zeros((1, 2)), W=W, T0=np.zeros((1, 2)), Tx=np.zeros((1, 2, 1)),
                              support=support, delta=1.0, lb=[1.5], ub=[4.0])
    scheme = build_partition(support, [[0.5]], [[0.2], [0.7]])
    sol = solve_pdr(problem, scheme, AmbiguityParameters([1.0], 0.0))
    assert sol.objective == pytest.approx(3.0, abs=1e-6)
    np.testing.assert_allclose(sol.x, [1.5], atol=1e-6)


def test_ia1_no_worse_than_ia0(case_factory):
    problem, scheme, amb, _ = case_factory(N=3, M=2, eps=1.0)
    a = solve_pdr(problem, scheme, amb, "ia0")
    b = solve_pdr(problem, scheme, amb, "ia1")
    assert b.objective <= a.objective + 1e-6 * abs(a.objective)


def test_conservative_against_in_sample_cvar(case_factory):
    problem, scheme, amb, samples = case_factory(N=4, M=2)
    sol = solve_pdr(problem, scheme, amb, "ia0")
    z = evaluate_second_stage(problem, sol.x, samples)
    lower = problem.c @ sol.x + empirical_cvar(z, problem.delta)
    assert sol.objective >= lower - 1e-5 * abs(lower)


def test_rules_are_feasible_on_their_cells(case_factory):
    problem, scheme, amb, _ = case_factory(N=4, M=2, eps=0.5)
    sol = solve_pdr(problem, scheme, amb, "ia0")
    rng = np.random.default_rng(0)
    lo, hi = problem.support.coordinate_ranges().T
    pts = np.column_stack([rng.uniform(lo, hi, (400, lo.size)), np.ones(400)])
    owner = scheme.locate(pts)
    T = problem.T(sol.x)
    for xi, k in zip(pts, owner):
        y = sol.recourse(k, xi)
        lhs = T @ xi
        rhs = np.einsum("lns,s->ln", problem.W, xi) @ y
        assert np.all(lhs <= rhs + 1e-5 * (1 + np.abs(lhs)))
        assert sol.tau(k, xi) >= problem.D @ xi @ y - sol.theta - 1e-4


def test_newsvendor_recourse_is_certified():
    cert = check_complete_recourse(instances.newsvendor(2))
    assert cert.certified
    rng = np.random.default_rng(1)
    problem = instances.newsvendor(2)
    lo, hi = problem.support.coordinate_ranges().T
    for xi in np.column_stack([rng.uniform(lo, hi, (50, lo.size)), np.ones(50)]):
        slack = np.einsum("lns,s->ln", problem.W, xi) @ (cert.Y @ xi)
        assert np.all(slack > 0)


def test_uncontrollable_row_is_not_certified():
    support = build_box_support([0.0], [1.0])
    W = np.zeros((1, 1, 2))
    T0 = np.array([[0.0, 1.0]])
    problem = TwoStageProblem(c=[0.0], D=np.zeros((1, 2)), W=W, T0=T0, Tx=np.zeros((1, 2, 1)), support=support)
    assert not check_complete_recourse(problem).certified


def test_certificate_survives_rescaling():
    from dataclasses import replace

    problem = instances.medical(2)
    assert check_complete_recourse(problem).certified
    assert check_complete_recourse(replace(problem, W=problem.W * 10.0)).certified


def test_shape_validation():
    support = build_box_support([0.0], [1.0])
    with pytest.raises(ValueError):
        TwoStageProblem(c=[0.0], D=np.zeros((1, 3)), W=np.zeros((1, 1, 2)), T0=np.zeros((1, 2)),
                        Tx=np.zeros((1, 2, 1)), support=support)
    with pytest.raises(ValueError):
        TwoStageProblem(c=[0.0], D=np.zeros((1, 2)), W=np.zeros((1, 1, 2)), T0=np.zeros((1, 2)),
                        Tx=np.zeros((1, 2, 1)), support=support, delta=0.0)
