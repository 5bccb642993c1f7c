import numpy as np
import pytest

from goblend.archive import Archive, CellRecord, Outcome, read_dump
from goblend.errors import ContractViolation


def rec(key, reward, length, r_a=None, terminal=False):
    return CellRecord(key, bytes(length), b"", float(reward), float(reward if r_a is None else r_a),
                      np.zeros(6), terminal)


def fuzz_offers(n, seed, channel="r_b", n_keys=40):
    """Random offers on a small key set; rewards drawn from a coarse grid to force ties."""
    rng = np.random.default_rng(seed)
    arc = Archive(10_000, log=True)
    for _ in range(n):
        key = int(rng.integers(n_keys))
        r = float(rng.integers(0, 6)) / 5
        length = int(rng.integers(1, 12))
        cand = rec(key, r, length) if channel == "r_b" else rec(key, 0.0, length, r_a=r)
        arc.offer(cand, channel)
        if rng.random() < 0.3:
            arc.mark_selected(int(rng.choice(arc.keys)))
    return arc


def check_log(arc):
    """Replay the log; returns per-key histories and asserts the invariants."""
    best, seen, violations = {}, {}, 0
    for key, outcome, reward, length in arc.log:
        if outcome == "selected":
            seen[key] = seen.get(key, 0) + 1
            continue
        inc = best.get(key)
        if outcome is Outcome.INSERTED:
            assert inc is None
            best[key] = (reward, length)
        elif outcome is Outcome.REPLACED:
            assert reward > inc[0] or (reward == inc[0] and length < inc[1])
            best[key] = (reward, length)
        else:
            if reward > inc[0] or (reward == inc[0] and length < inc[1]):
                violations += 1
    return best, seen, violations


class TestOffer:
    def test_insert_into_empty(self):
        arc = Archive(10)
        assert arc.offer(rec(1, 0.0, 3)) is Outcome.INSERTED
        assert len(arc) == 1

    def test_shorter_trajectory_at_equal_reward_replaces(self):
        arc = Archive(10)
        arc.offer(rec(1, 0.5, 10))
        assert arc.offer(rec(1, 0.5, 8)) is Outcome.REPLACED
        assert arc[1].length == 8

    def test_equal_reward_equal_length_rejected(self):
        arc = Archive(10)
        arc.offer(rec(1, 0.5, 10))
        assert arc.offer(rec(1, 0.5, 10)) is Outcome.REJECTED

    def test_higher_reward_replaces_even_if_longer(self):
        arc = Archive(10)
        arc.offer(rec(1, 0.5, 10))
        assert arc.offer(rec(1, 0.6, 30)) is Outcome.REPLACED

    def test_channel_governs(self):
        arc = Archive(10)
        arc.offer(rec(1, 1.0, 5, r_a=0.2), "r_a")
        assert arc.offer(rec(1, 0.0, 5, r_a=0.3), "r_a") is Outcome.REPLACED
        assert arc[1].r_b == 0.0

    def test_visit_count_survives_replacement(self):
        arc = Archive(10)
        arc.offer(rec(1, 0.1, 5))
        arc.mark_selected(1)
        arc.mark_selected(1)
        arc.offer(rec(1, 0.9, 5))
        assert arc[1].c_seen == 2
        assert arc.c_seen.tolist() == [2]

    def test_bound_enforced(self):
        arc = Archive(2)
        arc.offer(rec(1, 0, 1))
        arc.offer(rec(2, 0, 1))
        with pytest.raises(ContractViolation):
            arc.offer(rec(3, 0, 1))


class TestSelectionCounter:
    def test_fresh_cell(self):
        arc = Archive(5)
        arc.offer(rec("a", 0, 1))
        assert arc["a"].c_seen == 0
        arc.mark_selected("a")
        assert arc["a"].c_seen == 1

    def test_three_selections(self):
        arc = Archive(5)
        arc.offer(rec("a", 0, 1))
        for _ in range(3):
            arc.mark_selected("a")
        assert arc["a"].c_seen == 3

    def test_absent_key(self):
        with pytest.raises(ContractViolation):
            Archive(5).mark_selected("nope")


class TestFill:
    def test_empty(self):
        assert Archive(7296).fill_ratio() == 0.0

    def test_one_cell(self):
        arc = Archive(7296)
        arc.offer(rec(0, 0, 1))
        assert arc.fill_ratio() == 1 / 7296

    def test_terminal_and_open_share_one_key(self):
        arc = Archive(7296)
        arc.offer(rec(0, 0, 1))
        arc.offer(rec(0, 0, 2, terminal=True))
        assert arc.fill_ratio() == 1 / 7296
        assert len(arc) == 2


class TestTerminalSlot:
    def test_terminal_does_not_evict_open_cell(self):
        arc = Archive(10)
        arc.offer(rec(4, 0.5, 30, r_a=0.9))
        assert arc.offer(rec(4, 0.5, 40, r_a=0.2, terminal=True), "r_a") is Outcome.INSERTED
        assert arc[4].length == 30 and not arc[4].terminal
        assert arc[("terminal", 4)].length == 40
        assert arc.selectable.tolist() == [True, False]

    def test_terminal_records_compete_among_themselves(self):
        arc = Archive(10)
        arc.offer(rec(4, 16, 300, terminal=True))
        assert arc.offer(rec(4, 16, 290, terminal=True)) is Outcome.REPLACED
        assert arc.offer(rec(4, 15, 200, terminal=True)) is Outcome.REJECTED
        assert arc.best("r_b").length == 290

    def test_bound_counts_cell_keys(self):
        arc = Archive(1)
        arc.offer(rec(0, 0, 1))
        arc.offer(rec(0, 0, 3, terminal=True))
        with pytest.raises(ContractViolation):
            arc.offer(rec(1, 0, 1))


class TestBest:
    def test_prefers_complete_cells(self):
        arc = Archive(10)
        arc.offer(rec(1, 9, 50))
        arc.offer(rec(2, 4, 360, terminal=True))
        assert arc.best("r_b").key == 2
        assert arc.best("r_b", complete_only=False).key == 1

    def test_tie_goes_to_shorter(self):
        arc = Archive(10)
        arc.offer(rec(1, 5, 20))
        arc.offer(rec(2, 5, 10))
        arc.offer(rec(3, 5, 10))
        assert arc.best("r_b").key == 2


class TestDump:
    def test_round_trip(self, tmp_path):
        arc = fuzz_offers(500, seed=1)
        path = tmp_path / "a.jsonl"
        arc.dump(path)
        rows = read_dump(path)
        assert len(rows) == len(arc) == len({r["key"] for r in rows})
        for row, r in zip(rows, arc):
            assert row["key"] == r.key and row["c_seen"] == r.c_seen
            assert bytes(row["trajectory"]) == r.trajectory


class TestFuzz:
    @pytest.mark.parametrize("channel", ["r_b", "r_a"])
    def test_dominance_and_monotonicity(self, channel):
        arc = fuzz_offers(20_000, seed=7, channel=channel)
        best, seen, violations = check_log(arc)
        assert violations == 0
        for key, (reward, length) in best.items():
            assert arc[key].reward(channel) == reward and arc[key].length == length
            assert arc[key].c_seen == seen.get(key, 0)

    def test_identical_offers_identical_archives(self, tmp_path):
        a, b = fuzz_offers(3000, seed=3), fuzz_offers(3000, seed=3)
        a.dump(tmp_path / "a")
        b.dump(tmp_path / "b")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
