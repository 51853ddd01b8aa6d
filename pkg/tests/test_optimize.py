import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btmg_adapt.core import Bounds
from btmg_adapt.optimize import (OptimizationError, OptimizerOptions, lbfgs_min, multistart_max,
                                 run_starts)


def rosen(x):
    return 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2


def rosen_grad(x):
    return np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])


def bimodal(x):
    return math.exp(-(x[0] + 2) ** 2) + 2 * math.exp(-(x[0] - 2) ** 2)


def bimodal_grad(x):
    return np.array([-2 * (x[0] + 2) * math.exp(-(x[0] + 2) ** 2)
                     - 4 * (x[0] - 2) * math.exp(-(x[0] - 2) ** 2)])


def grid_argmax(f, lo, hi, step):
    g = np.arange(lo, hi + step / 2, step)
    return g[int(np.argmax([f([t]) for t in g]))]


class TestLBFGS:
    def test_quadratic_interior(self):
        r = lbfgs_min(lambda x: (x[0] - 3) ** 2, lambda x: np.array([2 * (x[0] - 3)]),
                      [0.0], Bounds((-10.0,), (10.0,)))
        assert abs(r.x_star[0] - 3) < 1e-8 and r.converged

    def test_quadratic_active_bound_exact(self):
        r = lbfgs_min(lambda x: (x[0] - 3) ** 2, lambda x: np.array([2 * (x[0] - 3)]),
                      [0.0], Bounds((-1.0,), (1.0,)))
        assert r.x_star[0] == 1.0 and r.converged

    def test_rosenbrock(self):
        r = lbfgs_min(rosen, rosen_grad, [-1.2, 1.0], Bounds((-5.0, -5.0), (5.0, 5.0)),
                      OptimizerOptions(max_iters=500))
        assert np.max(np.abs(r.x_star - 1.0)) < 1e-6 and r.iterations <= 500

    def test_combined_value_and_gradient(self):
        r = lbfgs_min(lambda x: (rosen(x), rosen_grad(x)), None, [-1.2, 1.0],
                      Bounds((-5.0, -5.0), (5.0, 5.0)), OptimizerOptions(max_iters=500))
        assert np.max(np.abs(r.x_star - 1.0)) < 1e-6

    def test_non_finite_aborts_with_point(self):
        with pytest.raises(OptimizationError) as ei:
            lbfgs_min(lambda x: math.inf, lambda x: np.zeros(1), [0.5], Bounds((0.0,), (1.0,)))
        assert ei.value.x is not None and "0.5" in str(ei.value)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_convex_quadratic_fast(self, n, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(n, n))
        H = A @ A.T + n * np.eye(n)
        xs = rng.normal(size=n)
        b = Bounds((-100.0,) * n, (100.0,) * n)
        r = lbfgs_min(lambda x: 0.5 * (x - xs) @ H @ (x - xs), lambda x: H @ (x - xs),
                      rng.normal(size=n), b)
        assert np.max(np.abs(r.x_star - xs)) < 1e-8
        assert r.iterations <= n + 5

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_iterates_in_box_and_descent(self, seed):
        rng = np.random.default_rng(seed)
        lo = rng.uniform(-2, 0, 2)
        b = Bounds(tuple(lo), tuple(lo + rng.uniform(0.1, 3, 2)))
        seen = []

        def f(x):
            seen.append(x.copy())
            return rosen(x)
        x0 = b.lo + rng.random(2) * b.width
        r = lbfgs_min(f, rosen_grad, x0, b)
        assert r.f_star <= rosen(x0)
        assert all(np.all(x >= b.lo) and np.all(x <= b.hi) for x in seen)
        assert np.all(r.x_star >= b.lo) and np.all(r.x_star <= b.hi)

    def test_deterministic(self):
        b = Bounds((-5.0, -5.0), (5.0, 5.0))
        a1 = lbfgs_min(rosen, rosen_grad, [-1.2, 1.0], b)
        a2 = lbfgs_min(rosen, rosen_grad, [-1.2, 1.0], b)
        assert a1.same_as(a2)

    def test_options_validated(self):
        with pytest.raises(ValueError):
            OptimizerOptions(c1=0.9, c2=0.1)


class TestMultistart:
    B = Bounds((-5.0,), (5.0,))

    def test_bimodal_matches_grid(self):
        ref = grid_argmax(bimodal, -5.0, 5.0, 1e-4)
        r = multistart_max(bimodal, bimodal_grad, self.B, 8, seed=0)
        assert abs(r.x_star[0] - ref) < 1e-3

    def test_single_fixed_start_equals_lbfgs(self):
        r = multistart_max(bimodal, bimodal_grad, self.B, 0, extra_starts=[[-1.0]])
        ref = lbfgs_min(lambda x: -bimodal(x), lambda x: -bimodal_grad(x), [-1.0], self.B)
        assert np.array_equal(r.x_star, ref.x_star) and r.f_star == -ref.f_star

    def test_deterministic(self):
        a = multistart_max(bimodal, bimodal_grad, self.B, 8, seed=3)
        b = multistart_max(bimodal, bimodal_grad, self.B, 8, seed=3)
        assert a.same_as(b)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 10))
    def test_beats_every_start(self, seed, n):
        from btmg_adapt.core import lhs_sample
        r = multistart_max(bimodal, bimodal_grad, self.B, n, seed=seed)
        assert all(r.f_star >= bimodal(s) for s in lhs_sample(n, self.B, seed))

    def test_needs_a_start(self):
        with pytest.raises(ValueError):
            multistart_max(bimodal, bimodal_grad, self.B, 0)

    def test_failed_starts_skipped(self):
        def f(x):
            return math.nan if x[0] < 0 else -(x[0] - 1) ** 2
        r = multistart_max(f, lambda x: np.array([-2 * (x[0] - 1)]), self.B, 0,
                           extra_starts=[[-3.0], [4.0]])
        assert abs(r.x_star[0] - 1) < 1e-6
        res = run_starts(f, lambda x: np.array([-2 * (x[0] - 1)]), self.B, [[-3.0], [4.0]])
        assert res[0] is None

    def test_all_fail(self):
        with pytest.raises(OptimizationError):
            multistart_max(lambda x: math.nan, lambda x: np.zeros(1), self.B, 3)
