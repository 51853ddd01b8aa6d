import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import central_diff, rel_err

from btmg_adapt import bayesopt
from btmg_adapt.bayesopt import BOConfig, bo_learn, expected_improvement
from btmg_adapt.core import Bounds, EvalRecord, lhs_sample
from btmg_adapt.gp import gp_fit

UNIT2 = Bounds((0.0, 0.0), (1.0, 1.0))


def quad_objective(theta):
    # records need six parameters for the obstacle task, so the 2-d point is padded
    r = -((theta[0] - 0.3) ** 2 + (theta[1] - 0.7) ** 2)
    return EvalRecord("obstacle", (0.1, 0.1, 0.3), tuple(theta) + (0.0,) * 4, r, 1, {})


class TestExpectedImprovement:
    def test_zero_sigma_no_improvement(self):
        assert expected_improvement(1.0, 0.0, 2.0) == 0.0
        assert expected_improvement(2.0, 0.0, 2.0) == 0.0

    def test_zero_sigma_improvement(self):
        assert expected_improvement(3.0, 0.0, 2.0) == 1.0

    def test_density_at_zero(self):
        assert abs(expected_improvement(0.5, 1.0, 0.5) - 0.398942280) < 1e-9

    def test_linear_in_sigma_at_zero(self):
        assert abs(expected_improvement(0.0, 4.0, 0.0) - 2 * expected_improvement(0.0, 1.0, 0.0)) < 1e-15

    def test_negative_variance(self):
        with pytest.raises(ValueError):
            expected_improvement(0.0, -1.0, 0.0)

    @given(st.floats(-10, 10), st.floats(0, 10), st.floats(-10, 10))
    def test_non_negative_and_above_improvement(self, m, v, b):
        ei = expected_improvement(m, v, b)
        assert ei >= 0.0 and ei >= m - b - 1e-12

    def test_vectorised(self):
        ei = expected_improvement(np.array([0.0, 1.0]), np.array([1.0, 0.0]), 0.5)
        assert ei.shape == (2,) and ei[1] == 0.5

    def test_acquisition_gradient(self):
        rng = np.random.default_rng(0)
        X = rng.random((15, 3))
        m = gp_fit(X, np.sin(4 * X).sum(axis=1), seed=0)
        for z in rng.random((30, 3)):
            g = bayesopt._ei_and_grad(m, z, 0.5)[1]
            fd = central_diff(lambda q: bayesopt._ei_and_grad(m, q, 0.5)[0], z)
            if np.linalg.norm(fd) > 1e-8:
                assert rel_err(g, fd) < 1e-4


class TestConfig:
    def test_defaults(self):
        c = BOConfig()
        assert (c.n_init, c.t_max, c.refit_every) == (20, 120, 10)

    def test_invalid(self):
        with pytest.raises(ValueError):
            BOConfig(n_init=30, t_max=20)
        with pytest.raises(ValueError):
            BOConfig(xi=-1.0)


class TestLoop:
    @pytest.mark.parametrize("seed", range(5))
    def test_quadratic_sanity(self, seed):
        hist, (theta, r) = bo_learn(quad_objective, UNIT2, BOConfig(t_max=60, seed=seed))
        assert len(hist) == 60
        assert math.hypot(theta[0] - 0.3, theta[1] - 0.7) < 0.05
        best = np.maximum.accumulate([h.reward for h in hist])
        assert np.all(np.diff(best) >= 0)

    def test_pure_initial_design(self):
        cfg = BOConfig(n_init=10, t_max=10, seed=4)
        hist, (theta, r) = bo_learn(quad_objective, UNIT2, cfg)
        assert len(hist) == 10 and r == max(h.reward for h in hist)
        init_seed = np.random.default_rng(4).integers(2**63, size=2)[0]
        design = lhs_sample(10, UNIT2, init_seed)
        assert np.allclose([h.theta[:2] for h in hist], design, atol=1e-15)

    def test_deterministic(self):
        cfg = BOConfig(t_max=30, seed=2)
        a, _ = bo_learn(quad_objective, UNIT2, cfg)
        b, _ = bo_learn(quad_objective, UNIT2, cfg)
        assert a == b

    def test_best_is_earliest_max(self):
        flat = lambda th: EvalRecord("obstacle", (0.1, 0.1, 0.3), tuple(th) + (0.0,) * 4, 1.0, 1, {})
        hist, (theta, r) = bo_learn(flat, UNIT2, BOConfig(n_init=5, t_max=8))
        assert theta == hist[0].theta

    @settings(max_examples=5, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_proposals_inside_bounds(self, seed):
        b = Bounds((-2.0, 5.0), (-1.0, 9.0))

        def f(th):
            assert b.contains(th)
            return EvalRecord("obstacle", (0.1, 0.1, 0.3), tuple(th) + (0.0,) * 4,
                              -float(np.sum(np.square(th))), 1, {})
        hist, _ = bo_learn(f, b, BOConfig(n_init=5, t_max=15, seed=seed))
        assert all(b.contains(h.theta[:2]) for h in hist)
