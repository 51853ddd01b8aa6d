import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import central_diff, rel_err

from btmg_adapt import perf
from btmg_adapt.core import Bounds, EvalRecord, TrainingData, lhs_sample
from btmg_adapt.gp import gp_mean
from btmg_adapt.perf import (load_bundle, penalty_from_range, query, save_bundle,
                             surrogate_reward, train_perf)
from btmg_adapt.svm import svm_classify, svm_decision

A = np.array([[0.5, 0.2], [0.1, 0.6]])
UNIT2 = Bounds((0.0, 0.0), (1.0, 1.0))


def quadratic_histories(n_var=12, per_var=25, seed=0):
    """r = -|theta - A v|^2, everything feasible."""
    rng = np.random.default_rng(seed)
    hists = []
    for _ in range(n_var):
        v = rng.random(2)
        hists.append([EvalRecord("push", v, th, -float(np.sum((th - A @ v) ** 2)), 1)
                      for th in rng.random((per_var, 2))])
    return hists


def mixed_histories(seed=0, n_var=10, per_var=30):
    """Feasible iff theta_0 < 0.6; reward favours large theta_0 so the penalty matters."""
    rng = np.random.default_rng(seed)
    hists = []
    for _ in range(n_var):
        v = rng.random(2)
        hists.append([EvalRecord("push", v, th, float(th[0] + 0.3 * v[0] - (th[1] - v[1]) ** 2),
                                 int(th[0] < 0.6)) for th in rng.random((per_var, 2))])
    return hists


@pytest.fixture(scope="module")
def quad_model():
    data = TrainingData.from_histories(quadratic_histories())
    return train_perf(data, seed=0, var_bounds=UNIT2, theta_bounds=UNIT2), data


@pytest.fixture(scope="module")
def mixed_model():
    data = TrainingData.from_histories(mixed_histories())
    return train_perf(data, seed=1, var_bounds=UNIT2, theta_bounds=UNIT2), data


class TestTraining:
    def test_joint_dimension_and_mu(self, mixed_model):
        m, data = mixed_model
        assert m.j_hat.dim == 4
        r = [h.reward for h in data.history]
        assert m.mu == 0.25 * (max(r) - min(r)) > 0

    def test_class_weights(self):
        labels = [1] * 300 + [0] * 2100
        from btmg_adapt.svm import class_weights
        wp, wn = class_weights(labels)
        assert wp == 4.0 and abs(wn - 0.5714285714285714) < 1e-15

    def test_residual_audit(self, mixed_model):
        m, data = mixed_model
        tol = 3 * np.sqrt(m.j_hat.noise_var) * m.j_hat.y_scale
        hits = [abs(gp_mean(m.j_hat, m.joint(h.v, h.theta)) - h.reward) <= max(tol, 1e-6)
                for h in data.history]
        assert np.mean(hits) >= 0.95

    def test_empty_history(self):
        with pytest.raises(ValueError):
            train_perf(TrainingData((), ()), var_bounds=UNIT2, theta_bounds=UNIT2)

    def test_penalty_fallback(self):
        assert penalty_from_range(1.0, 5.0) == 1.0
        assert penalty_from_range(3.0, 3.0) == 0.75


class TestSurrogate:
    def test_hard_formula_exact(self, mixed_model):
        m, _ = mixed_model
        rng = np.random.default_rng(0)
        seen = set()
        for _ in range(1000):
            v, th = rng.random(2), rng.random(2)
            x = m.joint(v, th)
            r, f = gp_mean(m.j_hat, x), svm_classify(m.f_hat, x)
            val = surrogate_reward(m, v, th, "hard")[0]
            assert val == (r if f == 1 else r - m.mu)
            seen.add(f)
        assert seen == {0, 1}

    def test_soft_midpoint(self, mixed_model):
        m, _ = mixed_model
        v, th = np.array([0.4, 0.5]), np.array([0.6, 0.5])
        x = m.joint(v, th)
        # shift the bias so the decision is zero at this point
        f0 = dataclasses.replace(m.f_hat, b=m.f_hat.b - svm_decision(m.f_hat, x))
        m0 = dataclasses.replace(m, f_hat=f0)
        assert abs(svm_decision(f0, x)) < 1e-12
        assert abs(surrogate_reward(m0, v, th, "soft")[0] - (gp_mean(m.j_hat, x) - 0.5 * m.mu)) < 1e-9

    def test_soft_gradient(self, mixed_model):
        m, _ = mixed_model
        rng = np.random.default_rng(1)
        for _ in range(100):
            v, th = rng.random(2), rng.random(2)
            g = surrogate_reward(m, v, th, "soft")[1]
            fd = central_diff(lambda t: surrogate_reward(m, v, t, "soft")[0], th)
            assert rel_err(g, fd) < 1e-4

    def test_bad_mode(self, mixed_model):
        with pytest.raises(ValueError):
            surrogate_reward(mixed_model[0], [0.1, 0.1], [0.1, 0.1], "fuzzy")


class TestQuery:
    def test_grid_oracle(self, quad_model):
        m, _ = quad_model
        g = np.arange(0.0, 1.0 + 1e-9, 0.01)
        for v in ([0.3, 0.6], [0.7, 0.2], [0.5, 0.5]):
            vals = np.array([[surrogate_reward(m, v, (a, b))[0] for b in g] for a in g])
            i, j = np.unravel_index(np.argmax(vals), vals.shape)
            q = query(m, v, seed=0)
            assert np.linalg.norm(np.array(q.theta_hat) - [g[i], g[j]]) <= 0.02

    def test_dominates_training_start(self, mixed_model):
        m, data = mixed_model
        for v, th in data.best[:4]:
            q = query(m, v, seed=3)
            z = m.joint(v, th)
            assert q.surrogate_value >= perf._soft_joint(m, z)[0] - 1e-12

    def test_feasibility_report_consistent(self, mixed_model):
        m, _ = mixed_model
        for v in np.random.default_rng(4).random((5, 2)):
            q = query(m, v, seed=1)
            assert q.predicted_feasible == svm_classify(m.f_hat, m.joint(v, q.theta_hat))
            assert UNIT2.contains(q.theta_hat)
            assert q.n_starts_used == 16 + 3
            if not q.fallback_flag:
                assert q.predicted_feasible == 1

    def test_deterministic(self, mixed_model):
        m, _ = mixed_model
        assert query(m, [0.2, 0.3], seed=5) == query(m, [0.2, 0.3], seed=5)

    def test_extrapolation_flagged(self, mixed_model):
        q = query(mixed_model[0], [1.5, 0.3], seed=0)
        assert q.extrapolated and UNIT2.contains(q.theta_hat)

    def test_neighbors_only(self, mixed_model):
        q = query(mixed_model[0], [0.2, 0.3], n_starts=0)
        assert q.n_starts_used == 3

    def test_neighbor_ties(self):
        bv = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
        assert perf.neighbor_indices(bv, np.array([0.5, 0.0]), 2).tolist() == [0, 1]

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 1000))
    def test_never_below_any_start(self, mixed_model, a, b, seed):
        m, data = mixed_model
        v = np.array([a, b])
        q = query(m, v, seed=seed)
        starts = list(lhs_sample(16, Bounds.unit(2), seed))
        bv, bt = data.best_arrays()
        for i in perf.neighbor_indices(bv, v, 3):
            starts.append(bt[i])
        best_start = max(perf._soft_joint(m, np.concatenate([v, s]))[0] for s in starts)
        assert q.surrogate_value >= best_start - 1e-12


class TestBundle:
    def test_roundtrip(self, mixed_model, tmp_path):
        m, _ = mixed_model
        save_bundle(m, tmp_path / "b")
        m2 = load_bundle(tmp_path / "b")
        assert m2.mu == m.mu and m2.task_id == "push"
        for v in np.random.default_rng(6).random((3, 2)):
            assert query(m, v, seed=2) == query(m2, v, seed=2)

    def test_wrong_kind(self, tmp_path):
        (tmp_path / "meta").write_text('{"kind": "direct"}')
        with pytest.raises(ValueError):
            load_bundle(tmp_path)
