import csv
import json
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goblend import demos
from goblend.demos import DemoSession, SyntheticConfig
from goblend.errors import InsufficientDataError, ParseError


def _session(arousal, actions=None, sid="x"):
    arousal = np.asarray(arousal, dtype=float)
    n = len(arousal)
    if actions is None:
        actions = np.tile([1, 0], (n, 1))
    return DemoSession(sid, np.zeros((n, 16)), np.asarray(actions), arousal, arousal)


def _write_csv(path, rows, n_features=2):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", *(f"f{i}" for i in range(n_features)), "gas", "steer", "arousal_raw"])
        w.writerows(rows)


class TestNormalize:
    def test_min_max(self):
        assert demos.normalize([2, 4, 6]).tolist() == [0.0, 0.5, 1.0]

    def test_constant_trace_warns(self):
        with pytest.warns(UserWarning, match="constant"):
            out = demos.normalize([3.0, 3.0, 3.0])
        assert out.tolist() == [0.5, 0.5, 0.5]

    @settings(max_examples=50)
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=50).filter(lambda v: max(v) - min(v) > 1e-3),
           st.floats(0.1, 10), st.floats(-10, 10))
    def test_invariant_to_positive_affine_maps(self, raw, scale, shift):
        a = demos.normalize(raw)
        b = demos.normalize(np.asarray(raw) * scale + shift)
        assert np.allclose(a, b, atol=1e-9)
        assert a.min() == 0.0 and a.max() == 1.0


class TestLoading:
    def test_parse_session(self, tmp_path):
        p = tmp_path / "session_01.csv"
        _write_csv(p, [[0, 0.1, 0.2, 1, 0, 2.0], [1, 0.3, 0.4, 0, -1, 6.0]])
        s = demos.load_session(p)
        assert s.session_id == "01"
        assert s.features.tolist() == [[0.1, 0.2], [0.3, 0.4]]
        assert s.actions.tolist() == [[1, 0], [0, -1]]
        assert s.arousal.tolist() == [0.0, 1.0]
        assert s.truth is None

    @pytest.mark.parametrize("row,msg", [
        ([0, 0.1, 1, 0, 2.0], "columns"),
        ([0, 0.1, "nan", 1, 0, 2.0], "non-finite"),
        ([0, 0.1, "abc", 1, 0, 2.0], "not a number"),
        ([5, 0.1, 0.2, 1, 0, 2.0], "expected window"),
        ([0, 0.1, 0.2, 3, 0, 2.0], "gas"),
    ])
    def test_malformed_rows_name_file_and_line(self, tmp_path, row, msg):
        p = tmp_path / "session_a.csv"
        _write_csv(p, [row])
        with pytest.raises(ParseError, match=msg) as exc:
            demos.load_session(p)
        assert exc.value.line == 2
        assert "session_a.csv:2" in str(exc.value)

    def test_too_many_windows(self, tmp_path):
        p = tmp_path / "session_a.csv"
        _write_csv(p, [[i, 0.0, 0.0, 1, 0, float(i)] for i in range(5)])
        with pytest.raises(ParseError, match="longer"):
            demos.load_session(p, max_windows=4)

    def test_dataset_directory(self, small_dataset, small_sessions):
        assert [s.session_id for s in small_sessions] == ["00", "01", "02", "03"]
        assert all(s.truth is not None for s in small_sessions)
        manifest = json.loads((small_dataset / "manifest.json").read_text())
        assert manifest["n_features"] == 16 and len(manifest["sessions"]) == 4

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            demos.load_dataset(tmp_path / "nope")


class TestTargetTrace:
    def test_mean_of_two(self):
        tt = demos.target_trace([_session([0.2]), _session([0.4])], horizon=1)
        assert tt.mean[0] == pytest.approx(0.3, abs=1e-15)

    def test_identical_sessions_have_zero_spread(self):
        s = [_session([0.1, 0.5, 0.9]), _session([0.1, 0.5, 0.9])]
        tt = demos.target_trace(s, horizon=3)
        assert tt.std.tolist() == [0.0] * 3
        assert tt.ci.tolist() == [0.0] * 3

    def test_needs_two_sessions(self):
        with pytest.raises(InsufficientDataError):
            demos.target_trace([_session([0.5])])

    def test_short_sessions_and_padding(self):
        s = [_session([0.0, 0.2, 0.4]), _session([1.0])]
        tt = demos.target_trace(s, horizon=6)
        assert tt.mean[0] == 0.5
        assert tt.count.tolist()[:3] == [2, 1, 1]
        assert tt.mean[1] == 0.2 and tt.ci[1] == 0.0
        assert tt.mean[3:].tolist() == [0.4] * 3

    def test_ci_matches_statistics_module(self, small_sessions):
        tt = demos.target_trace(small_sessions)
        for i in (0, 50, 200):
            vals = [s.arousal[i] for s in small_sessions if s.n_windows > i]
            assert tt.mean[i] == pytest.approx(statistics.fmean(vals), abs=1e-12)
            assert tt.ci[i] == pytest.approx(1.96 * statistics.stdev(vals) / len(vals) ** 0.5, abs=1e-12)

    def test_permutation_invariant(self, small_sessions):
        a = demos.target_trace(small_sessions)
        b = demos.target_trace(small_sessions[::-1])
        assert np.allclose(a.mean, b.mean, atol=1e-15) and np.allclose(a.ci, b.ci, atol=1e-15)


class TestActionFrequencies:
    def test_point_mass(self):
        f = demos.action_frequencies([_session([0.1, 0.2, 0.3], [[1, 0]] * 3)])
        assert f.as_dict()["1,0"] == 1.0
        assert f.probabilities.sum() == 1.0

    def test_counting(self):
        f = demos.action_frequencies([_session([0.1, 0.2], [[1, 0], [0, 0]])])
        assert f.as_dict()["1,0"] == 0.5 and f.as_dict()["0,0"] == 0.5

    def test_matches_external_histogram(self, small_dataset, small_sessions):
        counts = {}
        for p in sorted(small_dataset.glob("session_??.csv")):
            with open(p, newline="") as fh:
                for row in csv.DictReader(fh):
                    key = f"{int(float(row['gas']))},{int(float(row['steer']))}"
                    counts[key] = counts.get(key, 0) + 1
        total = sum(counts.values())
        got = demos.action_frequencies(small_sessions).as_dict()
        for key, c in counts.items():
            assert got[key] == pytest.approx(c / total, abs=1e-12)


class TestSynthetic:
    def test_regeneration_is_byte_identical(self, tmp_path, env, small_dataset):
        demos.generate_synthetic(tmp_path, SyntheticConfig(sessions=4), seed=3, env=env)
        for p in sorted(small_dataset.iterdir()):
            assert (tmp_path / p.name).read_bytes() == p.read_bytes()

    def test_every_session_finishes(self, small_sessions, env):
        for s in small_sessions:
            assert s.n_windows <= 360
            snap, feats = env.replay((s.actions[:, 0] + 1) * 3 + s.actions[:, 1] + 1)
            assert env.describe(snap).score == 16
            assert np.array_equal(feats, s.features)

    def test_noise_free_undistorted_equals_normalized_truth(self, tmp_path, env):
        cfg = SyntheticConfig(sessions=2, noise_sigma=0.0, distort=False)
        demos.generate_synthetic(tmp_path, cfg, seed=11, env=env)
        for s in demos.load_dataset(tmp_path):
            assert np.array_equal(s.arousal, demos.normalize(s.truth))

    def test_offroad_raises_truth(self, small_sessions):
        g = np.concatenate([s.truth for s in small_sessions])
        off = np.concatenate([s.features[:, 5] for s in small_sessions])
        assert np.corrcoef(off, g)[0, 1] > 0
