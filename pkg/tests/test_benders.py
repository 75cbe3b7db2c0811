import itertools
import math
from dataclasses import replace

import numpy as np
import pytest

from twostage_dro import instances
from twostage_dro.ambiguity import AmbiguityParameters
from twostage_dro.benders import (
    BendersState,
    CutPool,
    MasterInfeasible,
    PartitionSubproblem,
    cut_coefficients,
    feasibility_ray,
    run,
    solve_master,
    solve_subproblem_dual,
)
from twostage_dro.geometry import build_box_support, build_partition
from twostage_dro.reformulate import TwoStageProblem, extend_system, solve_partition_primal, solve_pdr


def facility_case(I=2, J=2, N=3, seed=0):
    rng = np.random.default_rng(seed)
    problem = instances.facility(I, J, fixed=[3000.0, 2000.0][:I] + [2500.0] * max(0, I - 2),
                                 capacity=1500.0, demand_bounds=(200.0, 1000.0), rng=seed)
    samples = rng.uniform(200, 1000, (N, J))
    scheme = build_partition(problem.support, samples, samples)
    return problem, scheme, AmbiguityParameters(np.full(N, 50.0), 0.0)


def unsatisfiable_case():
    """One native row nu <= 0 that no recourse can repair."""
    support = build_box_support([0.0], [1.0])
    W = np.zeros((1, 1, 2))
    T0 = np.array([[0.0, 1.0]])
    problem = TwoStageProblem(c=[1.0], D=np.zeros((1, 2)), W=W, T0=T0, Tx=np.zeros((1, 2, 1)),
                              support=support, delta=1.0, lb=[0.0], ub=[1.0])
    scheme = build_partition(support, [[0.5]], [[0.3], [0.6]])
    return problem, scheme, AmbiguityParameters([0.5], 0.0)


def test_cut_pool_deduplicates_and_symmetrizes():
    pool = CutPool(2)
    H = np.array([[[1.0, 2.0], [0.0, 1.0]]])
    assert pool.add(0, H, "optimality")
    assert not pool.add(0, H + 1e-12, "optimality")
    assert pool.add(1, H, "feasibility")
    np.testing.assert_allclose(pool.optimality[0][0][0], [[1.0, 1.0], [1.0, 1.0]])
    assert pool.count() == 2 and pool.count("feasibility") == 1


def test_state_convergence_rule():
    st = BendersState(tol=0.05, upper=100.0, lower=96.0)
    assert st.converged()
    st.lower = 90.0
    assert not st.converged()
    st.upper = math.inf
    assert math.isinf(st.gap) and not st.converged()


def test_empty_master_sits_on_the_box(case_factory):
    problem, scheme, amb, _ = case_factory(N=3, delta=1.0)
    problem = replace(problem, c=np.array([2.0]))
    sol = solve_master(problem, scheme, amb, CutPool(scheme.K), bound=1e3)
    np.testing.assert_allclose(sol.x, 0.0, atol=1e-6)
    assert sol.box_active
    assert sol.value == pytest.approx(-1e3, rel=1e-6)


def test_single_cut_enters_the_objective():
    problem, scheme, amb = facility_case(N=1)
    problem = replace(problem, delta=1.0)
    rows = extend_system(problem).active_rows(1.0)
    n = problem.support.dim
    H = np.zeros((len(rows), n, n))
    # demand rows have T0 = e, so the corner entry is the cut constant
    j = next(j for j, l in enumerate(rows) if l < problem.L and problem.T0[l][-1] == 1.0)
    H[j, -1, -1] = 5.0
    const, gx, gt = cut_coefficients(problem, H)
    assert (const, gt) == (5.0, 0.0) and not np.any(gx)
    pool = CutPool(1)
    pool.add(0, H, "optimality")
    sol = solve_master(problem, scheme, amb, pool)
    assert sol.s[0] == pytest.approx(5.0, abs=1e-6)
    assert sol.value == pytest.approx(5.0, abs=1e-6)
    assert not sol.box_active


def test_binary_master_matches_enumeration():
    problem, scheme, amb = facility_case(I=3, J=2, N=2)
    first = run(problem, scheme, amb, tol=0.5, max_iters=4, recover_rules=False)
    pool = first.pool
    mixed = solve_master(problem, scheme, amb, pool)
    best = math.inf
    for z in itertools.product((0.0, 1.0), repeat=problem.N1):
        fixed = replace(problem, lb=np.array(z), ub=np.array(z), binary=np.zeros(problem.N1, bool))
        best = min(best, solve_master(fixed, scheme, amb, pool).value)
    assert mixed.value == pytest.approx(best, rel=1e-6, abs=1e-6)


def test_subproblem_pairs_with_primal(case_factory):
    problem, scheme, amb, _ = case_factory(N=3, M=2, eps=0.5)
    rng = np.random.default_rng(3)
    for k in range(scheme.K):
        x = rng.uniform(0, 3, problem.N1)
        theta = rng.uniform(0, 30)
        dual = solve_subproblem_dual(problem, scheme, amb, k, x, theta)
        primal, _ = solve_partition_primal(problem, scheme, amb, k, x, theta)
        assert dual.value == pytest.approx(primal, rel=1e-5, abs=1e-6)
        corners = dual.H[:, -1, -1]
        assert np.all(corners >= -1e-8)


def test_zero_radius_pins_the_moment_matrix(case_factory):
    problem, scheme, amb, _ = case_factory(N=3, eps=0.0)
    sub = PartitionSubproblem(problem, scheme, amb, 0)
    out = sub.solve(np.ones(problem.N1), 5.0)
    system = extend_system(problem)
    O = sum(system.lam[l] * out.H[j] for j, l in enumerate(sub.rows))
    np.testing.assert_allclose(O, scheme.omegas[0], atol=1e-6)


def test_ray_for_unsatisfiable_row():
    problem, scheme, amb = unsatisfiable_case()
    assert math.isinf(solve_subproblem_dual(problem, scheme, amb, 0, [0.5]).value)
    ray = feasibility_ray(problem, scheme, amb, 0, [0.5])
    assert ray.value > 0
    assert np.all(np.abs(ray.H) <= 1 + 1e-7)
    with pytest.raises(MasterInfeasible):
        run(problem, scheme, amb, tol=0.01, max_iters=5)


def test_trivial_instance_converges_immediately():
    support = build_box_support([0.0], [1.0])
    W = np.zeros((1, 1, 2))
    W[0, 0, 1] = 1.0
    problem = TwoStageProblem(c=[2.0], D=np.zeros((1, 2)), W=W, T0=np.zeros((1, 2)), Tx=np.zeros((1, 2, 1)),
                              support=support, delta=1.0, lb=[1.0], ub=[4.0])
    scheme = build_partition(support, [[0.5]], [[0.2], [0.7]])
    res = run(problem, scheme, AmbiguityParameters([1.0], 0.0), tol=0.01)
    assert res.state.status == "optimal"
    assert res.state.iteration - res.state.enlargements <= 2
    assert res.state.upper == pytest.approx(2.0, abs=1e-6)


def test_newsvendor_matches_monolithic(case_factory, tmp_path):
    problem, scheme, amb, _ = case_factory(N=4, M=2, eps=1.0)
    mono = solve_pdr(problem, scheme, amb, "ia0")
    trace = tmp_path / "trace.csv"
    res = run(problem, scheme, amb, tol=0.01, trace_path=str(trace))
    assert res.state.status == "optimal"
    assert abs(res.state.upper - mono.objective) <= 0.01 * max(1.0, abs(mono.objective))
    assert res.state.lower <= mono.objective * (1 + 1e-6) + 1e-6
    # complete recourse: the ray program is never needed
    assert res.pool.count("feasibility") == 0
    assert trace.read_text().splitlines()[0].startswith("iteration,lower,upper,gap")
    assert res.solution.Y.shape[0] == scheme.K


def test_parallel_subproblems_agree(case_factory):
    problem, scheme, amb, _ = case_factory(N=3, eps=0.5)
    a = run(problem, scheme, amb, tol=0.01, recover_rules=False)
    b = run(problem, scheme, amb, tol=0.01, parallel=3, recover_rules=False)
    assert a.state.upper == pytest.approx(b.state.upper, rel=1e-8)
    assert a.state.iteration == b.state.iteration


def test_facility_converges_to_enumeration():
    problem, scheme, amb = facility_case(I=2, J=2, N=3)
    res = run(problem, scheme, amb, tol=0.01, recover_rules=False)
    assert res.state.status == "optimal"
    best = math.inf
    for z in itertools.product((0.0, 1.0), repeat=problem.N1):
        fixed = replace(problem, lb=np.array(z), ub=np.array(z), binary=np.zeros(problem.N1, bool))
        sol = solve_pdr(fixed, scheme, amb, "ia0", retry=False)
        if sol.ok:
            best = min(best, sol.objective)
    assert abs(res.state.upper - best) <= 0.01 * abs(best) + 1e-6


def test_marginal_feasibility_cut_violation_does_not_stall(case_factory):
    # an unpadded cut admits x1 + x2 = 80 - 1e-7 against a worst-case demand of 80
    problem, scheme, amb, _ = case_factory("inventory", seed=0, N=6, M=2, eps=20.0)
    mono = solve_pdr(problem, scheme, amb, "ia0")
    res = run(problem, scheme, amb, tol=0.01, recover_rules=False)
    assert res.state.status == "optimal"
    assert res.pool.count("feasibility") > 0
    assert abs(res.state.upper - mono.objective) <= 0.01 * abs(mono.objective)
