import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goblend.archive import CellRecord
from goblend.demos import TargetTrace
from goblend.errors import ContractViolation
from goblend.metrics import BestTrace, ccc, mean_ci, pearson, summarize, summarize_trace


def ccc_oracle(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    sxx = sum((a - mx) ** 2 for a in x) / n
    syy = sum((b - my) ** 2 for b in y) / n
    return 2 * sxy / (sxx + syy + (mx - my) ** 2)


def trace_from(h, t, c, sigma=None, n=None):
    n = len(h)
    z = np.zeros(n)
    return BestTrace(np.asarray(h, float), np.asarray(sigma if sigma is not None else z, float),
                     np.asarray(t, float), np.asarray(c, float), np.arange(n, dtype=float),
                     np.arange(n, dtype=float), np.arange(n, dtype=float), z, np.full(n, 20.0))


class TestCcc:
    def test_identical(self, rng):
        x = rng.random(30)
        assert ccc(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_mirror(self, rng):
        x = rng.random(30)
        assert ccc(x, -(x - x.mean()) + x.mean()) == pytest.approx(-1.0, abs=1e-12)

    def test_constant_series(self):
        assert ccc([0.5, 0.5], [0.5, 0.5]) == 1.0
        assert ccc([0.5, 0.5], [0.2, 0.2]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ContractViolation):
            ccc([1, 2, 3], [1, 2])

    def test_matches_oracle(self, rng):
        for _ in range(200):
            x, y = rng.random(100), rng.normal(size=100)
            assert ccc(x, y) == pytest.approx(ccc_oracle(x, y), abs=1e-9)

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=3, max_size=40),
           st.floats(0.1, 5), st.floats(-5, 5))
    def test_properties(self, pairs, scale, shift):
        x = np.array([p[0] for p in pairs])
        y = np.array([p[1] for p in pairs])
        if x.std() < 1e-3 or y.std() < 1e-3:
            return
        c = ccc(x, y)
        assert c == pytest.approx(ccc(y, x), abs=1e-12)
        assert abs(c) <= abs(pearson(x, y)) + 1e-12
        assert ccc(x * scale + shift, y * scale + shift) == pytest.approx(c, abs=1e-9)


class TestPearson:
    def test_identity_and_negation(self, rng):
        x = rng.random(20)
        assert pearson(x, x) == pytest.approx(1.0, abs=1e-12)
        assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-12)

    def test_zero_variance_warns(self):
        with pytest.warns(UserWarning):
            assert pearson([1, 1, 1], [1, 2, 3]) == 0.0


class TestSummary:
    def test_agent_matching_target(self):
        t = [0.2, 0.4, 0.6, 0.5]
        row = summarize_trace(trace_from(t, t, [0.05] * 4))
        assert row.arousal_ccc == pytest.approx(1.0, abs=1e-12)
        assert row.confidence == 1.0
        assert row.mean_arousal == pytest.approx(np.mean(t), abs=1e-15)

    def test_deviation_and_stats(self):
        tr = trace_from([0.5, 0.5], [0.5, 0.5], [0.1, 0.1], sigma=[0.1, 0.3])
        tr.offroad[:] = [1.0, 0.0]
        row = summarize_trace(tr, fill_ratio=0.25)
        assert row.arousal_deviation == pytest.approx(0.2, abs=1e-15)
        assert row.time_offroad_pct == 50.0
        assert row.archive_fill_pct == 25.0
        assert row.average_speed == 20.0

    def test_single_window_has_no_ccc(self):
        row = summarize_trace(trace_from([0.5], [0.5], [0.1]))
        assert math.isnan(row.arousal_ccc) and math.isnan(row.behavior_ccc)

    def test_summarize_checks_target(self):
        tr = trace_from([0.5, 0.6], [0.5, 0.6], [0.1, 0.1])
        best = CellRecord(0, bytes(2), b"", 0.0, 0.0)
        target = TargetTrace(np.array([0.5, 0.6, 0.7]), np.zeros(3), np.array([0.1, 0.1, 0.1]), np.ones(3))
        assert summarize(best, target, trace=tr).arousal_ccc == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(ContractViolation):
            summarize(CellRecord(0, bytes(3), b"", 0.0, 0.0), target, trace=tr)

    def test_csv_round_trip_recomputes_summary(self, tmp_path, rng):
        n = 50
        tr = trace_from(rng.random(n), rng.random(n), rng.random(n) * 0.2, sigma=rng.random(n) * 0.1)
        tr.offroad[:] = rng.random(n)
        tr.write_csv(tmp_path / "t.csv")
        back = BestTrace.read_csv(tmp_path / "t.csv")
        a, b = summarize_trace(tr), summarize_trace(back)
        for k, v in a.as_dict().items():
            assert b.as_dict()[k] == pytest.approx(v, abs=1e-9, nan_ok=True)


class TestMeanCi:
    def test_values(self):
        m, ci = mean_ci([1.0, 2.0, 3.0])
        assert m == 2.0
        assert ci == pytest.approx(1.96 * 1.0 / math.sqrt(3), abs=1e-15)

    def test_nan_ignored(self):
        assert mean_ci([math.nan, 4.0]) == (4.0, 0.0)
        m, ci = mean_ci([math.nan])
        assert math.isnan(m) and math.isnan(ci)
