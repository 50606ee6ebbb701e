"""Tests for the group property suites."""

import numpy as np

from monocanon.checks import CheckReport, _eigen_positive, group_suites_2d, jacobian_stats


def test_jacobian_suites_cover_every_sampled_warp():
    suites = {suite.name: suite for suite in group_suites_2d(triples=20, points=500, seed=3)}
    for name in ("2d_separable_jacobian_diagonal", "2d_separable_jacobian_positive",
                 "2d_near_separable_jacobian_positive"):
        assert suites[name].cases == 20
        assert suites[name].passed, name


def test_eigen_positive_rejects_a_fold():
    jac = np.array([[[1.0, 0.0], [0.0, 2.0]], [[1.0, 3.0], [3.0, 1.0]], [[0.1, -1.0], [1.0, 0.1]]])
    # the last one is a rotation-like map with complex eigenvalues of positive real part
    np.testing.assert_array_equal(_eigen_positive(jac), [True, False, True])


def test_independent_jacobian_stats_are_rates():
    stats = jacobian_stats(warps=10, points=500, seed=1)
    assert 0.0 <= stats["warp_fraction"] <= stats["point_fraction"] <= 1.0
    assert stats["warps"] == 10


def test_stats_are_reported_not_asserted():
    report = CheckReport([], {"independent_jacobian": {"warp_fraction": 0.0}})
    assert report.passed
    assert report.to_dict()["stats"]["independent_jacobian"]["warp_fraction"] == 0.0
    assert "stats" not in CheckReport([]).to_dict()
