import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btmg_adapt.core import (Bounds, EvalRecord, RecordFormatError, TaskVariation, TrainingData,
                             denormalize, lhs_sample, normalize, read_records, read_variations,
                             records_roundtrip, write_records, write_variations)
from btmg_adapt.tasks.obstacle import VARIATION_BOUNDS as OBSTACLE_V


def _strata_occupied(pts, bounds, n):
    z = (np.asarray(pts) - bounds.lo) / bounds.width
    idx = np.floor(z * n).astype(int)
    return [sorted(idx[:, j].tolist()) == list(range(n)) for j in range(bounds.dim)]


class TestBounds:
    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            Bounds((0.0, 1.0), (0.0, 2.0))

    def test_reversed_rejected(self):
        with pytest.raises(ValueError):
            Bounds((1.0,), (0.0,))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Bounds((0.0,), (1.0, 2.0))

    def test_non_finite(self):
        with pytest.raises(ValueError):
            Bounds((0.0,), (math.inf,))

    def test_unit(self):
        b = Bounds.unit(3)
        assert b.lower == (0.0, 0.0, 0.0) and b.upper == (1.0, 1.0, 1.0)


class TestNormalize:
    def test_lower_maps_to_zero(self):
        b = Bounds((-1.0, 2.0), (3.0, 5.0))
        assert np.array_equal(normalize(b.lo, b), [0.0, 0.0])

    def test_upper_maps_to_one(self):
        b = Bounds((-1.0, 2.0), (3.0, 5.0))
        assert np.array_equal(normalize(b.hi, b), [1.0, 1.0])

    def test_midpoint(self):
        assert normalize([3.0], Bounds((2.0,), (4.0,)))[0] == 0.5

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            normalize([1.0, 2.0], Bounds((0.0,), (1.0,)))
        with pytest.raises(ValueError):
            denormalize([0.5, 0.5], Bounds((0.0,), (1.0,)))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 9), st.integers(0, 2**32 - 1))
    def test_roundtrip(self, dim, seed):
        rng = np.random.default_rng(seed)
        lo = rng.uniform(-100, 100, dim)
        hi = lo + rng.uniform(1e-3, 100, dim)
        b = Bounds(tuple(lo), tuple(hi))
        x = lo + rng.random(dim) * (hi - lo)
        assert np.allclose(denormalize(normalize(x, b), b), x, rtol=0, atol=1e-12 * max(1, np.abs(x).max()))


class TestLHS:
    def test_single_point(self):
        p = lhs_sample(1, Bounds((0.0,), (1.0,)), 0)
        assert p.shape == (1, 1) and 0.0 <= p[0, 0] < 1.0

    def test_four_strata(self):
        p = lhs_sample(4, Bounds((0.0,), (10.0,)), 3)[:, 0]
        counts = [np.sum((p >= a) & (p < a + 2.5)) for a in (0.0, 2.5, 5.0, 7.5)]
        assert counts == [1, 1, 1, 1]

    def test_obstacle_twenty(self):
        p = lhs_sample(20, OBSTACLE_V, 11)
        assert all(_strata_occupied(p, OBSTACLE_V, 20))
        assert all(OBSTACLE_V.contains(x) for x in p)

    def test_deterministic(self):
        b = Bounds.unit(4)
        assert np.array_equal(lhs_sample(7, b, 5), lhs_sample(7, b, 5))
        assert not np.array_equal(lhs_sample(7, b, 5), lhs_sample(7, b, 6))

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            lhs_sample(0, Bounds.unit(1), 0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 60), st.integers(1, 9), st.integers(0, 2**32 - 1))
    def test_stratification_property(self, n, dim, seed):
        rng = np.random.default_rng(seed)
        lo = rng.uniform(-5, 5, dim)
        b = Bounds(tuple(lo), tuple(lo + rng.uniform(0.01, 10, dim)))
        p = lhs_sample(n, b, seed)
        assert p.shape == (n, dim)
        assert all(_strata_occupied(p, b, n))


def _rec(i, v=(0.1, 0.2, 0.3), reward=1.5):
    return EvalRecord("obstacle", v, (i, 0.1, 0.2, 0.3, 0.05, 0.05), reward, i % 2,
                      {"finish_time": 1.0, "min_clearance": 0.05, "success": 1.0})


class TestRecords:
    def test_empty_roundtrip(self, tmp_path):
        p = tmp_path / "r.csv"
        write_records(p, [], layout=(3, 6, ("a",)))
        assert p.read_text().count("\n") == 1
        assert read_records(p) == []

    def test_one_record(self, tmp_path):
        r = _rec(1)
        assert records_roundtrip([r], tmp_path / "r.csv") == [r]

    def test_extreme_values(self, tmp_path):
        rng = np.random.default_rng(0)
        vals = [1e300, -1e300, 0.0, -0.0, 5e-324, 1 / 3, math.pi]
        recs = []
        for i in range(2400):
            x = [vals[(i + k) % len(vals)] * (1 + rng.random()) if k % 3 else vals[(i + k) % len(vals)]
                 for k in range(10)]
            recs.append(EvalRecord("push", x[:4], x[4:8], x[8], i % 2,
                                   {"pos_error": x[9], "ori_error": 0.0, "contact": 1.0}))
        back = records_roundtrip(recs, tmp_path / "big.csv")
        assert back == recs

    def test_lf_and_utf8(self, tmp_path):
        p = tmp_path / "r.csv"
        write_records(p, [_rec(0)])
        assert b"\r\n" not in p.read_bytes()

    def test_malformed_line_number(self, tmp_path):
        p = tmp_path / "r.csv"
        write_records(p, [_rec(0), _rec(1)])
        lines = p.read_text().splitlines()
        lines[2] = lines[2].replace("1.5", "abc", 1)
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(RecordFormatError, match=r":3:"):
            read_records(p)

    def test_wrong_field_count(self, tmp_path):
        p = tmp_path / "r.csv"
        write_records(p, [_rec(0)])
        p.write_text(p.read_text() + "obstacle,1,2\n")
        with pytest.raises(RecordFormatError, match=r":3:"):
            read_records(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("foo,bar\n")
        with pytest.raises(RecordFormatError, match=r":1:"):
            read_records(p)

    def test_feasible_must_be_binary(self):
        with pytest.raises(ValueError):
            EvalRecord("push", (0,) * 4, (0,) * 4, 0.0, 2, {})

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=10, max_size=10))
    def test_lossless_property(self, tmp_path_factory, x):
        p = tmp_path_factory.mktemp("rec") / "r.csv"
        r = EvalRecord("push", x[:4], x[4:8], x[8], 1, {"pos_error": x[9]})
        assert records_roundtrip([r], p) == [r]


class TestVariationsAndTrainingData:
    def test_variation_file_roundtrip(self, tmp_path):
        vs = [TaskVariation("push", (-0.1, 0.02, 0.2, 0.0)), TaskVariation("push", (1 / 3, 0, 0, 0))]
        write_variations(tmp_path / "v.csv", vs)
        assert read_variations(tmp_path / "v.csv") == vs

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            TaskVariation("juggle", (0.0,))

    def test_best_is_max_reward_earliest(self):
        v = (0.1, 0.2, 0.3)
        h1 = [_rec(0, v, 1.0), _rec(1, v, 3.0), _rec(2, v, 3.0)]
        h2 = [_rec(5, (0.2, 0.2, 0.3), -1.0)]
        data = TrainingData.from_histories([h1, h2])
        assert len(data.best) == 2 and len(data.history) == 4
        assert data.best[0] == (v, h1[1].theta)
        assert data.best[1][1] == h2[0].theta
