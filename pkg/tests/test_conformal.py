import math

import numpy as np
import pytest
from scipy.spatial import Delaunay

from conformal_ro.conformal import (
    GridSpec,
    calibrate_scores,
    conformal_rank,
    full_conformal_counts,
    full_conformal_pi,
    full_conformal_region,
    order_statistic_index,
    split_calibrate,
    split_region_contains,
)
from conformal_ro.errors import GridTooLarge, InsufficientData, NotPositiveDefinite
from conformal_ro.linalg import fit_covariance
from conformal_ro.numerics import Rng

from oracles import brute_full_member, brute_full_pi, ceil_level, kth_smallest

# planted 9-point sample whose full-conformal region at alpha = 0.1 is non-convex
NONCONVEX = np.array([
    [0.907, -0.627], [1.543, 1.002], [-0.517, 0.212], [0.355, -0.486], [0.494, -0.599],
    [0.94, 0.794], [0.074, -0.408], [0.726, 0.174], [-1.328, -2.888],
])


class TestOrderStatistic:
    @pytest.mark.parametrize("m,level,expected", [
        (250, 0.9, 225), (10, 0.5, 5), (10, 0.95, 10), (100, 0.9, 90), (251, 0.9, 226),
        (501, 0.9, 451), (7, 1.0, 7), (3, 0.01, 1),
    ])
    def test_index(self, m, level, expected):
        assert order_statistic_index(m, level) == expected

    @pytest.mark.parametrize("alpha", [0.05, 0.1, 0.25, 0.5, 0.3, 0.7, 0.01])
    @pytest.mark.parametrize("n2", [9, 50, 99, 500, 1250])
    def test_rank_matches_exact_arithmetic(self, alpha, n2):
        assert conformal_rank(n2, alpha) == ceil_level(n2 + 1, alpha)


class TestCalibrateScores:
    def test_median(self):
        cal = calibrate_scores(np.arange(1, 10), 0.5)
        assert cal.k == 5 and cal.omega_alpha == 5

    def test_unbounded(self):
        cal = calibrate_scores(np.arange(1, 10), 0.05)
        assert cal.k == 10 and cal.unbounded
        assert split_region_contains(cal, np.array([1e9, -1e9]))

    def test_ninety(self):
        scores = np.random.default_rng(0).permutation(np.arange(1, 100)).astype(float)
        cal = calibrate_scores(scores, 0.1)
        assert cal.k == 90
        assert cal.omega_alpha == kth_smallest(scores.tolist(), 90) == 90
        assert np.all(np.diff(cal.scores) >= 0)

    def test_alpha_validation(self):
        with pytest.raises(ValueError):
            calibrate_scores([1.0], 0.0)


class TestSplitCalibrate:
    @pytest.fixture
    def data(self):
        return Rng(5).standard_normal((100, 2)) @ np.array([[1.0, 0.0], [0.4, 0.8]])

    def test_fit_on_first_fold(self, data):
        cal = split_calibrate(data, 0.1, 0.5, Rng(3))
        perm = Rng(3).permutation(100)
        i1, i2 = perm[:50], perm[50:]
        model = fit_covariance(data[i1])
        assert cal.model.mean == pytest.approx(model.mean, abs=0)
        expected = np.sort(model.scores(data[i2]))
        assert cal.scores == pytest.approx(expected, rel=1e-14)
        assert cal.n2 == 50 and cal.k == ceil_level(51, 0.1)
        assert cal.omega_alpha == cal.scores[cal.k - 1]

    def test_reproducible(self, data):
        a = split_calibrate(data, 0.2, rng=Rng(1))
        b = split_calibrate(data, 0.2, rng=Rng(1))
        assert np.array_equal(a.scores, b.scores)

    def test_split_ratio(self, data):
        cal = split_calibrate(data, 0.2, 0.7, Rng(1))
        assert cal.n2 == 30 and cal.model.n_used == 70

    def test_region_membership(self, data):
        cal = split_calibrate(data, 0.1, rng=Rng(2))
        assert split_region_contains(cal, cal.model.mean)
        direction = np.array([0.3, -0.9])
        unit = direction / cal.model.scores(cal.model.mean + direction)
        assert split_region_contains(cal, cal.model.mean + 0.99 * cal.omega_alpha * unit)
        assert not split_region_contains(cal, cal.model.mean + 1.01 * cal.omega_alpha * unit)

    def test_region_is_closed(self, data):
        model = fit_covariance(data)
        probe = model.mean + np.array([0.7, 1.3])
        cal = calibrate_scores([model.scores(probe)], 0.5, model=model)
        assert cal.k == 1 and split_region_contains(cal, probe)

    def test_insufficient(self):
        with pytest.raises(InsufficientData):
            split_calibrate(np.zeros((5, 3)), 0.1)

    def test_nested_in_alpha(self, data):
        probes = Rng(9).standard_normal((2000, 2)) * 2
        alphas = [0.05, 0.1, 0.25, 0.5, 0.75]
        cals = [split_calibrate(data, a, rng=Rng(4)) for a in alphas]
        radii = [c.omega_alpha for c in cals]
        assert radii == sorted(radii, reverse=True)
        inside = [split_region_contains(c, probes) for c in cals]
        for wide, narrow in zip(inside, inside[1:]):
            assert np.all(wide | ~narrow)

    def test_marginal_validity(self):
        trials, n, alpha = 2000, 100, 0.1
        hits = 0
        for t in range(trials):
            X = Rng(77, t).standard_normal((n + 1, 2))
            cal = split_calibrate(X[:n], alpha, rng=Rng(78, t))
            hits += bool(split_region_contains(cal, X[n]))
        cov = hits / trials
        se = math.sqrt(0.9 * 0.1 / trials)
        assert 0.9 - 3 * se <= cov <= 0.9 + 1 / 51 + 3 * se


class TestFullConformalPi:
    def test_identical_points(self):
        data = np.tile([1.5, -2.0], (6, 1))
        assert full_conformal_pi(data, np.array([1.5, -2.0])) == 1.0

    def test_far_point_is_least_conforming(self):
        data = Rng(1).standard_normal((12, 2))
        assert full_conformal_pi(data, np.array([1e3, -5e2])) == 1.0

    def test_mean_is_most_conforming(self):
        data = Rng(2).standard_normal((12, 2))
        assert full_conformal_pi(data, data.mean(axis=0)) == pytest.approx(1 / 13)

    def test_planted_five_points(self):
        data = np.array([[0.2, 1.1], [-0.7, 0.3], [1.4, -0.2], [0.1, -1.3], [-0.5, 0.9]])
        y = data.mean(axis=0)
        assert full_conformal_pi(data, y) == pytest.approx(brute_full_pi(data, y), abs=0)
        for y in ([0.5, 0.5], [-1.0, 2.0], [1.4, -0.2]):
            y = np.array(y)
            assert full_conformal_pi(data, y) == brute_full_pi(data, y)

    def test_step_function(self):
        data = Rng(3).standard_normal((15, 2))
        pts = Rng(4).standard_normal((500, 2)) * 3
        pis = full_conformal_counts(data, pts) / 16
        assert np.allclose(pis * 16, np.rint(pis * 16))
        assert pis.min() >= 1 / 16 and pis.max() <= 1.0

    def test_degenerate_augmented_covariance(self):
        data = np.column_stack([np.arange(6.0), np.arange(6.0)])
        with pytest.raises(NotPositiveDefinite):
            full_conformal_pi(data, np.array([7.0, 7.0]))

    def test_requires_rows(self):
        with pytest.raises(InsufficientData):
            full_conformal_pi(np.zeros((3, 2)), np.zeros(2))

    def test_higher_dim(self):
        data = Rng(5).standard_normal((10, 4))
        y = np.array([0.3, -0.2, 1.0, 0.1])
        assert full_conformal_pi(data, y) == brute_full_pi(data, y)


class TestFullConformalRegion:
    def test_high_alpha_threshold_is_one(self):
        data = Rng(6).standard_normal((9, 2))
        grid = GridSpec.covering(data, num=31)
        region = full_conformal_region(data, 0.99, grid)
        assert region.threshold == 1
        assert np.array_equal(region.memberships, region.counts == 1)

    def test_planted_twenty_matches_oracle(self):
        data = Rng(7).standard_normal((20, 2)) @ np.array([[1.0, 0.0], [0.6, 0.5]])
        grid = GridSpec.covering(data, num=21)
        region = full_conformal_region(data, 0.2, grid)
        expected = [brute_full_member(data, p, 0.2) for p in region.points]
        assert np.array_equal(region.memberships, expected)

    def test_mean_is_member(self):
        data = Rng(8).standard_normal((14, 2))
        m = data.mean(axis=0)
        grid = GridSpec(tuple(m), tuple(m), (1.0, 1.0))
        for alpha in (1 / 15, 0.2, 0.5, 0.9):
            region = full_conformal_region(data, alpha, grid)
            assert region.memberships.tolist() == [True]
            assert brute_full_member(data, m, alpha)

    def test_grid_covers_data(self):
        data = Rng(9).standard_normal((20, 2)) * [1.0, 3.0]
        g = GridSpec.covering(data)
        sd = data.std(axis=0, ddof=1)
        for j in range(2):
            assert g.axis(j)[0] <= data[:, j].min() - 3 * sd[j] + 1e-12
            assert g.axis(j)[-1] >= data[:, j].max() + 3 * sd[j] - 1e-9

    def test_nonconvex_region(self):
        grid = GridSpec.covering(NONCONVEX, num=61)
        region = full_conformal_region(NONCONVEX, 0.1, grid)
        hull = Delaunay(region.member_points)
        outside = region.points[~region.memberships]
        # a convex region contains every lattice node in the hull of its member nodes
        assert np.count_nonzero(hull.find_simplex(outside) >= 0) > 0

    def test_grid_budget(self):
        data = Rng(10).standard_normal((10, 2))
        grid = GridSpec((0.0, 0.0), (1.0, 1.0), (0.01, 0.01), max_points=1000)
        with pytest.raises(GridTooLarge):
            full_conformal_region(data, 0.1, grid)

    def test_rejects_higher_dim(self):
        data = Rng(11).standard_normal((10, 3))
        grid = GridSpec((0.0,) * 3, (1.0,) * 3, (0.5,) * 3)
        with pytest.raises(ValueError):
            full_conformal_region(data, 0.1, grid)

    def test_bad_step(self):
        with pytest.raises(ValueError):
            GridSpec((0.0, 0.0), (1.0, 1.0), (0.0, 0.1))

    def test_nearest_member_matches_point_evaluation(self):
        data = Rng(12).standard_normal((20, 2))
        grid = GridSpec.covering(data, num=41)
        region = full_conformal_region(data, 0.1, grid)
        for y in Rng(13).standard_normal((50, 2)) * 2:
            idx = [int(np.clip(np.rint((y[j] - grid.mins[j]) / grid.steps[j]), 0, grid.shape[j] - 1))
                   for j in range(2)]
            node = np.array([grid.axis(j)[idx[j]] for j in range(2)])
            expected = full_conformal_counts(data, node[None, :])[0] <= region.threshold
            assert region.nearest_member(y) == expected

    def test_marginal_validity_on_lattice(self):
        # held-out point snapped to the nearest node of a 41 x 41 covering lattice;
        # snapping moves a point by at most half a step per axis, allowed for by SLACK
        trials, n, alpha = 2000, 20, 0.1
        slack = 0.02
        hits = 0
        for t in range(trials):
            X = Rng(55, t).standard_normal((n + 1, 2))
            train, y = X[:n], X[n]
            grid = GridSpec.covering(train, num=41)
            idx = [int(np.clip(np.rint((y[j] - grid.mins[j]) / grid.steps[j]), 0, grid.shape[j] - 1))
                   for j in range(2)]
            node = np.array([grid.axis(j)[idx[j]] for j in range(2)])
            cnt = full_conformal_counts(train, node[None, :])[0]
            hits += cnt <= order_statistic_index(n + 1, 1 - alpha)
        cov = hits / trials
        se = math.sqrt(0.9 * 0.1 / trials)
        assert cov >= 0.9 - 3 * se - slack
        assert cov <= 0.9 + 1 / (n + 1) + 3 * se + slack
