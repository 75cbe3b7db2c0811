import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from twostage_dro.ambiguity import (
    AmbiguityParameters,
    chi2_dual_solution,
    cross_validate_epsilon,
    moment_dual_blocks,
    theoretical_epsilon,
    theoretical_gamma,
    theoretical_parameters,
    worst_case_probability_value,
)
from twostage_dro.conic import solve
from twostage_dro.copositive import discharge
from twostage_dro.geometry import SupportCone, build_box_support, build_partition
from twostage_dro.modeling import Expr, Model


@pytest.mark.parametrize(
    "R,n,K,rho1,expected",
    [(1, 1, 1, 1.0, 2.0), (2, 4, 2, 2 * math.exp(-2), 8.0), (1, 100, 1, 1.0, 0.2)],
)
def test_theoretical_epsilon(R, n, K, rho1, expected):
    assert abs(theoretical_epsilon(R, n, K, rho1) - expected) <= 1e-12


@pytest.mark.parametrize(
    "N,K,rho2,expected", [(1, 1, 1.0, 0.0), (2, 2, math.exp(-1), 2.5), (10, 1, math.exp(-1), 0.2)]
)
def test_theoretical_gamma(N, K, rho2, expected):
    assert abs(theoretical_gamma(N, K, rho2) - expected) <= 1e-12


def test_calibration_domain_errors():
    with pytest.raises(ValueError):
        theoretical_epsilon(1.0, 0, 1, 0.1)
    with pytest.raises(ValueError):
        theoretical_gamma(5, 2, 0.0)
    with pytest.raises(ValueError):
        AmbiguityParameters([-1.0], 0.0)
    with pytest.raises(ValueError):
        AmbiguityParameters([1.0], -0.1)


def two_cell_oracle(gamma):
    # p = (1/2 + t, 1/2 - t) on the boundary t^2 / (1/4 - t^2) = gamma
    t = brentq(lambda t: t * t / (0.25 - t * t) - gamma, 0.0, 0.5 - 1e-12)
    return 0.5 + t


def test_two_cell_value_matches_root_finding():
    oracle = two_cell_oracle(0.1)
    assert oracle == pytest.approx(0.6508, abs=1e-4)
    for form in ("primal", "dual"):
        v = worst_case_probability_value([1.0, 0.0], [0.5, 0.5], 0.1, form)
        assert v == pytest.approx(oracle, abs=1e-6)
    assert chi2_dual_solution([1.0, 0.0], [0.5, 0.5], 0.1)[0] == pytest.approx(oracle, abs=1e-6)


@given(st.integers(0, 10_000), st.integers(2, 6))
@settings(max_examples=25, deadline=None)
def test_singleton_and_constant_cases(seed, K):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=K)
    p_hat = rng.dirichlet(np.ones(K))
    assert worst_case_probability_value(phi, p_hat, 0.0) == pytest.approx(phi @ p_hat, abs=1e-6)
    assert worst_case_probability_value(np.ones(K), p_hat, rng.uniform(0, 3)) == pytest.approx(1.0, abs=1e-6)


@given(st.integers(0, 10_000), st.integers(2, 6), st.floats(0.01, 2.0))
@settings(max_examples=25, deadline=None)
def test_primal_dual_agree(seed, K, gamma):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=K)
    p_hat = rng.dirichlet(np.ones(K))
    a = worst_case_probability_value(phi, p_hat, gamma, "primal")
    b = worst_case_probability_value(phi, p_hat, gamma, "dual")
    assert a == pytest.approx(b, abs=1e-6)
    # the ball contains p_hat and lies in the simplex
    assert phi @ p_hat - 1e-7 <= a <= phi.max() + 1e-7


def test_moment_block_with_zero_multipliers_is_empirical():
    model = Model()
    Q = np.array([[1.0, 0.5], [0.5, 2.0]])
    omega = np.array([[4.0, 2.0], [2.0, 1.0]])
    md = moment_dual_blocks(model, Expr.constant(Q), omega, 0.0, build_box_support([0.0], [3.0]))
    model.add_zero(md.alpha)
    model.add_zero(md.B.flatten())
    model.minimize(md.objective)
    assert solve(model.compile()).objective == pytest.approx(np.trace(Q @ omega), abs=1e-7)


def test_frobenius_term_vanishes_at_minus_identity():
    model = Model()
    md = moment_dual_blocks(model, Expr.constant(np.eye(2)), np.eye(2), 1.0, build_box_support([0.0], [1.0]))
    model.add_zero(md.alpha)
    model.add_zero((md.B + np.eye(2)).flatten())
    model.minimize(md.objective)
    # alpha + tr(I) + tr(-I) + ||I - I||
    assert solve(model.compile()).objective == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("q", [2.0, -3.0, 0.0])
@pytest.mark.parametrize("eps", [0.0, 1.0])
def test_one_point_support(q, eps):
    cone = SupportCone(0, np.array([[1.0]]))
    model = Model()
    md = moment_dual_blocks(model, Expr.constant(np.array([[q]])), np.array([[1.0]]), eps, cone)
    discharge(model, md.requirement, "ia0")
    model.minimize(md.objective)
    assert solve(model.compile()).objective == pytest.approx(q, abs=1e-6)


def test_cv_single_candidate():
    out = cross_validate_epsilon(np.full((4, 1), 2.0), [0.0], lambda tr, m: 0.0, lambda x, te: 1.0)
    assert out.multiplier == 0.0


def newsvendor_like(train, m):
    # stock the largest seen demand plus a hedge
    return min(float(train.max()) + m, 10.0)


def shortfall_cost(x, test):
    t = test.ravel()
    return float(np.mean(10.0 * np.maximum(t - x, 0) + np.maximum(x - t, 0)))


def test_cv_mismatched_folds_prefer_large_radius():
    data = np.array([[0.0], [10.0]])
    out = cross_validate_epsilon(data, [0.0, 10.0], newsvendor_like, shortfall_cost, shape=np.ones(3))
    assert out.multiplier == 10.0
    np.testing.assert_allclose(out.epsilon, 10.0)


def test_cv_identical_atoms_prefer_zero():
    data = np.full((6, 1), 5.0)
    out = cross_validate_epsilon(data, [0.0, 10.0], newsvendor_like, shortfall_cost)
    assert out.multiplier == 0.0


def test_cv_disqualifies_failures():
    def fit(train, m):
        if m > 0:
            raise RuntimeError("solver failed")
        return 0.0

    out = cross_validate_epsilon(np.zeros((4, 1)), [0.0, 1.0], fit, lambda x, t: 0.0)
    assert out.disqualified == [1.0]
    with pytest.raises(RuntimeError):
        cross_validate_epsilon(np.zeros((4, 1)), [1.0], fit, lambda x, t: 0.0)


def test_theoretical_parameters_fill_empty_cells():
    base = build_box_support([0.0], [1.0])
    scheme = build_partition(base, [[0.1], [0.9], [0.5]], [[0.0], [0.05], [0.95]])
    assert scheme.counts.tolist() == [2, 1, 0]
    amb = theoretical_parameters(scheme, 0.1, 0.1)
    assert amb.epsilon[2] == pytest.approx(amb.epsilon[:2].max())
    assert amb.gamma == pytest.approx(theoretical_gamma(3, 3, 0.1))
