import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conformal_ro.errors import DegenerateDirection, NotConvergedWarning
from conformal_ro.numerics import Rng
from conformal_ro.robust import (
    frank_wolfe_gap,
    project_simplex,
    robust_objective,
    solve_nominal,
    solve_robust,
    worst_case,
)
from conformal_ro.uncertainty import Ellipsoid

from oracles import grid_min_2d

TOY = Ellipsoid(center=np.array([1.0, 1.0]), chol=np.eye(2), radius=1.0)


def random_ellipsoid(seed, d, radius):
    rng = Rng(seed)
    a = rng.standard_normal((d, d))
    cov = a @ a.T / d + 0.1 * np.eye(d)
    return Ellipsoid(center=rng.standard_normal(d), chol=np.linalg.cholesky(cov), radius=radius)


class TestWorstCase:
    @pytest.mark.parametrize("z,u", [
        ((0.5, 0.5), (1 + 1 / math.sqrt(2), 1 + 1 / math.sqrt(2))),
        ((1.0, 0.0), (2.0, 1.0)),
        ((0.25, 0.75), (1 + 0.25 / math.sqrt(0.625), 1 + 0.75 / math.sqrt(0.625))),
    ])
    def test_toy(self, z, u):
        worst_u, value = worst_case(TOY, np.array(z))
        assert worst_u == pytest.approx(u, rel=1e-14)
        assert value == pytest.approx(1 + math.hypot(*z), rel=1e-14)

    def test_zero_direction(self):
        with pytest.raises(DegenerateDirection):
            worst_case(TOY, np.zeros(2))

    def test_radius_zero(self):
        s = Ellipsoid(center=np.array([3.0, 1.0]), chol=np.eye(2), radius=0.0)
        u, v = worst_case(s, np.array([0.2, 0.8]))
        assert u.tolist() == [3.0, 1.0] and v == pytest.approx(1.4)

    @pytest.mark.parametrize("seed", range(10))
    def test_supremum_by_sampling(self, seed):
        # boundary points C w / |w| * radius + center sweep the surface
        s = random_ellipsoid(seed, 3, 1.5)
        z = project_simplex(Rng(seed, 1).standard_normal(3))
        w = Rng(seed, 2).standard_normal((200_000, 3))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        surf = s.center + s.radius * w @ s.chol.T
        u, v = worst_case(s, z)
        assert s.score(u) == pytest.approx(s.radius, rel=1e-12)
        assert float(u @ z) == pytest.approx(v, rel=1e-13)
        best = (surf @ z).max()
        assert best <= v + 1e-12
        assert best >= v - 1e-3 * (1 + abs(v))


class TestProjectSimplex:
    @pytest.mark.parametrize("v,expected", [
        ((0.3, 0.7), (0.3, 0.7)),
        ((1.0, 1.0), (0.5, 0.5)),
        ((2.0, 0.0), (1.0, 0.0)),
        ((-1.0, -1.0, 5.0), (0.0, 0.0, 1.0)),
        ((0.5, 0.5, 0.5), (1 / 3, 1 / 3, 1 / 3)),
    ])
    def test_examples(self, v, expected):
        assert project_simplex(np.array(v)) == pytest.approx(expected, abs=1e-15)

    @settings(max_examples=300, deadline=None)
    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e3, 1e3)))
    def test_variational_inequality(self, v):
        p = project_simplex(v)
        assert np.all(p >= 0) and p.sum() == pytest.approx(1.0, abs=1e-12)
        # (v - p)'(q - p) <= 0 for every vertex q of the simplex
        r = v - p
        scale = 1e-9 * (1 + np.abs(v).max())
        assert np.all(r - r @ p <= scale)


class TestSolveRobust:
    def test_toy(self):
        sol = solve_robust(TOY)
        assert sol.converged
        assert sol.z == pytest.approx([0.5, 0.5], abs=1e-6)
        assert sol.value == pytest.approx(1 + 1 / math.sqrt(2), abs=1e-9)
        assert sol.worst_u == pytest.approx([1.7071068, 1.7071068], abs=1e-6)

    def test_zero_radius_is_nominal(self):
        s = Ellipsoid(center=np.array([0.0, 10.0]), chol=np.eye(2), radius=0.0)
        sol = solve_robust(s)
        assert sol.z == pytest.approx([1.0, 0.0], abs=1e-9) and sol.value == pytest.approx(0.0, abs=1e-9)

    def test_identity_grid(self):
        s = Ellipsoid(center=np.array([0.0, 0.0]), chol=np.eye(2), radius=1.0)
        sol = solve_robust(s)
        ref = grid_min_2d(s.center, np.eye(2), 1.0)
        assert sol.value == pytest.approx(1 / math.sqrt(2), abs=1e-9)
        assert sol.value <= ref + 1e-12

    @pytest.mark.parametrize("seed", range(15))
    def test_random_2d_against_grid(self, seed):
        s = random_ellipsoid(seed, 2, 0.8)
        sol = solve_robust(s)
        ref = grid_min_2d(s.center, s.shape_matrix, s.radius, m=200_001)
        assert sol.converged
        assert sol.value <= ref + 1e-12
        assert sol.value >= ref - 1e-7

    @pytest.mark.parametrize("seed", range(20))
    def test_random_10d_gap(self, seed):
        s = random_ellipsoid(100 + seed, 10, 2.0)
        sol = solve_robust(s)
        assert sol.converged
        assert sol.gap_estimate <= 1e-6 * (1 + abs(sol.value))
        assert np.all(sol.z >= 0) and sol.z.sum() == pytest.approx(1.0, abs=1e-12)
        # no vertex or random feasible point beats it
        for q in np.vstack([np.eye(10), [project_simplex(Rng(seed, k).standard_normal(10)) for k in range(50)]]):
            assert robust_objective(s, q) >= sol.value - 1e-12 * (1 + abs(sol.value))

    def test_value_increases_with_radius(self):
        base = random_ellipsoid(3, 4, 1.0)
        vals = [solve_robust(Ellipsoid(base.center, base.chol, r)).value for r in (0.0, 0.5, 1.0, 2.0, 4.0)]
        assert vals == sorted(vals)

    def test_objective_convex(self):
        s = random_ellipsoid(4, 5, 1.3)
        for k in range(100):
            a = project_simplex(Rng(k, 0).standard_normal(5))
            b = project_simplex(Rng(k, 1).standard_normal(5))
            lam = (k + 0.5) / 100
            mid = robust_objective(s, lam * a + (1 - lam) * b)
            assert mid <= lam * robust_objective(s, a) + (1 - lam) * robust_objective(s, b) + 1e-12

    def test_not_converged_warning(self):
        s = random_ellipsoid(5, 10, 2.0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            sol = solve_robust(s, tol=1e-30, max_iter=5)
        assert not sol.converged and sol.iterations == 5
        assert any(issubclass(w.category, NotConvergedWarning) for w in caught)

    def test_gap_bounds_suboptimality(self):
        s = random_ellipsoid(6, 6, 1.0)
        z = np.full(6, 1 / 6)
        opt = solve_robust(s).value
        assert robust_objective(s, z) - opt <= frank_wolfe_gap(s, z) + 1e-12


class TestSolveNominal:
    def test_argmin(self):
        sol = solve_nominal(np.array([3.0, 1.0, 2.0]))
        assert sol.z.tolist() == [0.0, 1.0, 0.0] and sol.value == 1.0

    def test_tie_lowest_index(self):
        assert solve_nominal(np.array([2.0, 1.0, 1.0])).z.tolist() == [0.0, 1.0, 0.0]


class TestWorkedInstance:
    """Zero mean, unit variances, correlation 0.5, radius 2."""

    s = Ellipsoid(center=np.zeros(2), chol=np.linalg.cholesky([[1.0, 0.5], [0.5, 1.0]]), radius=2.0)

    def test_optimum(self):
        sol = solve_robust(self.s)
        assert sol.z == pytest.approx([0.5, 0.5], abs=1e-6)
        assert sol.value == pytest.approx(math.sqrt(3), abs=1e-9)
        assert sol.worst_u == pytest.approx([1.73, 1.73], abs=0.01)

    @pytest.mark.parametrize("z,u", [((0.1, 0.9), (1.15, 1.99)), ((0.9, 0.1), (1.99, 1.15))])
    def test_suboptimal_worst_cases(self, z, u):
        worst_u, value = worst_case(self.s, np.array(z))
        assert worst_u == pytest.approx(u, abs=0.01)
        # analytic: Sigma z / sqrt(z' Sigma z) scaled by the radius
        sz = np.array([[1.0, 0.5], [0.5, 1.0]]) @ np.array(z)
        assert worst_u == pytest.approx(2 * sz / math.sqrt(np.array(z) @ sz), rel=1e-14)

    def test_unit_sphere_axis(self):
        u, v = worst_case(Ellipsoid(np.zeros(2), np.eye(2), 1.0), np.array([1.0, 0.0]))
        assert u == pytest.approx([1.0, 0.0], abs=1e-15) and v == 1.0

    def test_far_second_mean(self):
        s = Ellipsoid(center=np.array([0.0, 10.0]), chol=np.eye(2), radius=1.0)
        sol = solve_robust(s)
        assert sol.z == pytest.approx([1.0, 0.0], abs=1e-9)
        assert sol.value == pytest.approx(1.0, abs=1e-9)
        assert abs(sol.value - grid_min_2d(s.center, np.eye(2), 1.0)) <= 1e-4

    @pytest.mark.parametrize("v,expected", [((0.5, 0.5, 2.0), (0.0, 0.0, 1.0)), ((0.3, 0.3, 0.3), (1 / 3,) * 3)])
    def test_projection_examples(self, v, expected):
        assert project_simplex(np.array(v)) == pytest.approx(expected, abs=1e-15)

    def test_nominal_on_square(self):
        square = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
        sol = solve_nominal(square.mean(axis=0))
        assert sol.z.tolist() == [1.0, 0.0] and sol.value == 1.0
