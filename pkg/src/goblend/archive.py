"""Go-Explore cell archive with score/affect replacement rules."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

CHANNELS = ("r_b", "r_a")


class Outcome(enum.Enum):
    INSERTED = "inserted"
    REPLACED = "replaced"
    REJECTED = "rejected"


@dataclass(slots=True)
class CellRecord:
    """Best-known way of reaching one cell.

    ``trajectory`` holds action codes 0-8 as bytes; ``sums`` are the running
    affect accumulators (see ``affect.ACC_*``) so a restored cell can keep
    extending its rewards.
    """

    key: object
    trajectory: bytes
    snapshot: bytes
    r_b: float
    r_a: float
    sums: np.ndarray = field(default_factory=lambda: np.zeros(6))
    terminal: bool = False
    c_seen: int = 0

    @property
    def length(self) -> int:
        return len(self.trajectory)

    def reward(self, channel: str) -> float:
        return self.r_b if channel == "r_b" else self.r_a


class Archive:
    """Map from cell key to its best ``CellRecord``.

    Alongside the dict, records live in insertion-ordered slots with numpy
    mirrors of ``r_a``, ``c_seen`` and selectability, so selection weights
    can be computed without touching Python objects.

    Terminal records are filed under ``("terminal", key)``: a finished run
    and an explorable state that share a cell key do not evict each other.
    """

    def __init__(self, bound: int, log: bool = False):
        if bound < 1:
            raise ValueError("archive bound must be positive")
        self.bound = bound
        self.records: dict = {}
        self.keys: list = []
        self._slot: dict = {}
        self._cells: set = set()
        self._r_a = np.zeros(64)
        self._c_seen = np.zeros(64, dtype=np.int64)
        self._open = np.zeros(64, dtype=bool)
        self.inserted = 0
        self.replaced = 0
        self.log = [] if log else None

    def __len__(self):
        return len(self.records)

    def __contains__(self, key):
        return key in self.records

    def __getitem__(self, key) -> CellRecord:
        return self.records[key]

    def __iter__(self):
        return (self.records[k] for k in self.keys)

    @property
    def r_a(self) -> np.ndarray:
        return self._r_a[:len(self.keys)]

    @property
    def c_seen(self) -> np.ndarray:
        return self._c_seen[:len(self.keys)]

    @property
    def selectable(self) -> np.ndarray:
        """True for cells that can still be explored from (not terminal)."""
        return self._open[:len(self.keys)]

    def _grow(self):
        n = len(self._r_a) * 2
        self._r_a = np.resize(self._r_a, n)
        self._c_seen = np.resize(self._c_seen, n)
        self._open = np.resize(self._open, n)

    def offer(self, candidate: CellRecord, channel: str = "r_b") -> Outcome:
        """Insert, replace or reject ``candidate`` under the reward ``channel``.

        Replacement needs a strictly higher reward, or an equal reward with a
        strictly shorter trajectory. The incumbent's visit count carries over.
        """
        key = ("terminal", candidate.key) if candidate.terminal else candidate.key
        incumbent = self.records.get(key)
        if incumbent is None:
            if candidate.key not in self._cells and len(self._cells) >= self.bound:
                raise ContractViolation(f"archive bound {self.bound} exceeded")
            self._cells.add(candidate.key)
            slot = len(self.keys)
            if slot == len(self._r_a):
                self._grow()
            self.keys.append(key)
            self._slot[key] = slot
            candidate.c_seen = 0
            outcome = Outcome.INSERTED
            self.inserted += 1
        else:
            new = candidate.r_b if channel == "r_b" else candidate.r_a
            old = incumbent.r_b if channel == "r_b" else incumbent.r_a
            if new > old or (new == old and len(candidate.trajectory) < len(incumbent.trajectory)):
                slot = self._slot[key]
                candidate.c_seen = incumbent.c_seen
                outcome = Outcome.REPLACED
                self.replaced += 1
            else:
                if self.log is not None:
                    self.log.append((key, Outcome.REJECTED, candidate.reward(channel), candidate.length))
                return Outcome.REJECTED
        self.records[key] = candidate
        self._r_a[slot] = candidate.r_a
        self._c_seen[slot] = candidate.c_seen
        self._open[slot] = not candidate.terminal
        if self.log is not None:
            self.log.append((key, outcome, candidate.reward(channel), candidate.length))
        return outcome

    def mark_selected(self, key) -> None:
        rec = self.records.get(key)
        if rec is None:
            raise ContractViolation(f"cell {key!r} is not in the archive")
        rec.c_seen += 1
        self._c_seen[self._slot[key]] = rec.c_seen
        if self.log is not None:
            self.log.append((key, "selected", None, None))

    def fill_ratio(self) -> float:
        """Share of the key space reached by at least one record."""
        return len(self._cells) / self.bound

    def best(self, channel: str, complete_only: bool = True) -> CellRecord:
        """Highest-reward record; ties go to the shorter, then earlier, cell.

        With ``complete_only`` the search is restricted to terminal cells
        when any exist. The empty root trajectory is never preferred over a
        non-empty one.
        """
        pool = list(self)
        if complete_only and any(r.terminal for r in pool):
            pool = [r for r in pool if r.terminal]
        if any(r.length for r in pool):
            pool = [r for r in pool if r.length]
        if not pool:
            raise ContractViolation("archive is empty")
        best = pool[0]
        for rec in pool[1:]:
            a, b = rec.reward(channel), best.reward(channel)
            if a > b or (a == b and rec.length < best.length):
                best = rec
        return best

    def dump(self, path, key_format=None) -> None:
        """Write one JSON object per record, in insertion order."""
        fmt = key_format or (lambda k: k)
        with open(path, "w") as fh:
            for rec in self:
                row = {
                    "key": fmt(rec.key),
                    "r_b": rec.r_b,
                    "r_a": rec.r_a,
                    "length": rec.length,
                    "c_seen": rec.c_seen,
                    "terminal": rec.terminal,
                    "trajectory": list(rec.trajectory),
                }
                fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_dump(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
