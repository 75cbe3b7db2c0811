import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twostage_dro.geometry import (
    PartitionScheme,
    SupportViolation,
    assign_samples,
    build_box_support,
    build_partition,
    build_voronoi_cones,
    halton_constructors,
    homogenize,
    max_radius,
    read_samples_csv,
    write_samples_csv,
)


def test_interval_rows():
    cone = build_box_support([0.0], [10.0])
    np.testing.assert_allclose(cone.P, [[1.0, 0.0], [-1.0, 10.0]])


def test_zero_lower_bounds_give_nonnegativity_first():
    cone = build_box_support([0.0, 0.0], [1.0, 1.0])
    np.testing.assert_allclose(cone.P[:2], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def test_slice_ranges_recovered():
    cone = build_box_support([20.0], [100.0])
    np.testing.assert_allclose(cone.coordinate_ranges(), [[20.0, 100.0]], atol=1e-6)


def test_bad_box_rejected():
    with pytest.raises(ValueError):
        build_box_support([1.0, 0.0], [0.0, 1.0])


def test_single_constructor_keeps_base():
    base = build_box_support([0.0], [1.0])
    (cone,) = build_voronoi_cones(base, [[0.5]])
    np.testing.assert_array_equal(cone.P, base.P)


def test_bisector_row_one_dimension():
    base = build_box_support([0.0], [1.0])
    cones = build_voronoi_cones(base, [[0.0, 1.0], [1.0, 1.0]])
    np.testing.assert_allclose(cones[0].P[-1], [-2.0, 1.0])
    np.testing.assert_allclose(cones[1].P[-1], [2.0, -1.0])


@given(st.integers(0, 10_000), st.integers(2, 5), st.integers(1, 3))
@settings(max_examples=40, deadline=None)
def test_nearest_point_satisfies_exactly_its_rows(seed, K, S):
    rng = np.random.default_rng(seed)
    base = build_box_support(np.zeros(S), np.ones(S))
    pts = rng.uniform(0, 1, (K, S))
    cones = build_voronoi_cones(base, pts)
    for xi in homogenize(rng.uniform(0, 1, (20, S))):
        d = ((pts - xi[:S]) ** 2).sum(axis=1)
        order = np.sort(d)
        if order[1] - order[0] < 1e-9:
            continue
        owner = int(np.argmin(d))
        for k, cone in enumerate(cones):
            extra = cone.P[base.P.shape[0]:] @ xi
            if k == owner:
                assert np.all(extra > 0)
            else:
                assert np.any(extra < 0)


def test_two_samples_two_cells():
    base = build_box_support([0.0], [1.0])
    ix, p_hat, omegas, _, _ = assign_samples([[0.1], [0.9]], base, [[0.0], [1.0]])
    assert [list(i) for i in ix] == [[0], [1]]
    np.testing.assert_allclose(p_hat, [0.5, 0.5])
    np.testing.assert_allclose(omegas[0], [[0.01, 0.1], [0.1, 1.0]])


def test_single_sample_second_moment():
    base = build_box_support([0.0], [2.0])
    _, p_hat, omegas, _, _ = assign_samples([[1.0]], base, [[1.0]])
    np.testing.assert_allclose(omegas[0], np.ones((2, 2)))
    assert p_hat[0] == 1.0


def test_sample_outside_support_is_reported():
    base = build_box_support([0.0], [1.0])
    with pytest.raises(SupportViolation):
        assign_samples([[1.5]], base, [[0.5]])


def test_max_radius_examples():
    assert max_radius(build_box_support([0.0], [1.0]), [0.5, 1.0]) == pytest.approx(0.5, abs=1e-6)
    sq = build_box_support([0.0, 0.0], [10.0, 10.0])
    assert max_radius(sq, [0.0, 0.0, 1.0]) == pytest.approx(math.sqrt(200), abs=1e-5)
    for M in (1, 3):
        cube = build_box_support(np.full(M, 20.0), np.full(M, 100.0))
        assert max_radius(cube, np.r_[np.full(M, 60.0), 1.0]) == pytest.approx(40 * math.sqrt(M), abs=1e-4)


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 12))
@settings(max_examples=25, deadline=None)
def test_partition_statistics(seed, S, N):
    rng = np.random.default_rng(seed)
    base = build_box_support(np.zeros(S), np.full(S, 5.0))
    samples = rng.uniform(0, 5, (N, S))
    K = int(rng.integers(1, N + 1))
    scheme = build_partition(base, samples[:K], samples)
    assert scheme.p_hat.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(scheme.p_hat, scheme.counts / N)
    for k in range(K):
        W = scheme.omegas[k]
        np.testing.assert_allclose(W, W.T)
        assert np.linalg.eigvalsh(W).min() > -1e-9
        if scheme.counts[k]:
            assert W[-1, -1] == pytest.approx(1.0)
        assert len(scheme.cones[k].P) == len(base.P) + K - 1


def test_partition_save_load(tmp_path):
    base = build_box_support([0.0, 0.0], [1.0, 2.0])
    scheme = build_partition(base, [[0.2, 0.2], [0.8, 1.5]], [[0.1, 0.1], [0.9, 1.9], [0.5, 0.4]])
    scheme.save(tmp_path / "p.json")
    back = PartitionScheme.load(tmp_path / "p.json")
    np.testing.assert_allclose(back.omegas, scheme.omegas)
    for a, b in zip(back.cones, scheme.cones):
        np.testing.assert_allclose(a.P, b.P)
    np.testing.assert_array_equal(back.locate([[0.7, 1.2]]), [1])


def test_halton_points_lie_in_box():
    base = build_box_support([0.0, 10.0], [1.0, 20.0])
    pts = halton_constructors(base, 7, seed=3)
    assert pts.shape == (7, 3)
    assert all(base.contains(p) for p in pts)


def test_samples_csv_round_trip(tmp_path):
    data = np.arange(6.0).reshape(3, 2)
    write_samples_csv(tmp_path / "s.csv", data, ["a", "b"])
    np.testing.assert_allclose(read_samples_csv(tmp_path / "s.csv", 2), data)
    with pytest.raises(ValueError):
        read_samples_csv(tmp_path / "s.csv", 3)
