"""Evaluation measures for a best trajectory and run aggregation."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ContractViolation

TRACE_COLUMNS = ("window", "h_a", "sigma", "t_a", "c_a", "score", "score_mean", "t_score", "offroad", "speed")


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractViolation("series must be one-dimensional and of equal length")
    if len(x) < 2:
        raise ContractViolation("series need at least two points")
    return x, y


def ccc(x, y) -> float:
    """Lin's concordance correlation coefficient with population moments."""
    x, y = _pair(x, y)
    mx, my = x.mean(), y.mean()
    vx = ((x - mx) ** 2).mean()
    vy = ((y - my) ** 2).mean()
    cov = ((x - mx) * (y - my)).mean()
    den = vx + vy + (mx - my) ** 2
    if den == 0.0:
        # both constant: concordant only if equal
        return 1.0 if mx == my else 0.0
    return float(2.0 * cov / den)


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt((dx * dx).sum())
    sy = math.sqrt((dy * dy).sum())
    if sx == 0.0 or sy == 0.0:
        warnings.warn("zero variance series; Pearson correlation set to 0", stacklevel=2)
        return 0.0
    return float((dx * dy).sum() / (sx * sy))


@dataclass
class BestTrace:
    """Per-window replay of a trajectory, the source of every summary number."""

    h_a: np.ndarray
    sigma: np.ndarray
    t_a: np.ndarray
    c_a: np.ndarray
    score: np.ndarray  # integer score at the end of each window
    score_mean: np.ndarray  # window-averaged score
    t_score: np.ndarray  # experts' mean score-over-time
    offroad: np.ndarray  # fraction of the window spent off-road
    speed: np.ndarray  # window-averaged speed, world units per second

    def __len__(self):
        return len(self.h_a)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for i in range(len(self)):
                w.writerow([i, *(repr(float(getattr(self, c)[i])) for c in TRACE_COLUMNS[1:])])

    @classmethod
    def read_csv(cls, path) -> "BestTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header")
        cols = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(TRACE_COLUMNS))
        return cls(*(cols[:, j] for j in range(1, len(TRACE_COLUMNS))))


@dataclass
class SummaryRow:
    final_score: float
    behavior_ccc: float
    mean_arousal: float
    arousal_ccc: float
    arousal_deviation: float
    confidence: float
    archive_fill_pct: float
    time_offroad_pct: float
    average_speed: float

    def as_dict(self) -> dict:
        return asdict(self)


SUMMARY_FIELDS = tuple(f.name for f in fields(SummaryRow))


def summarize_trace(trace: BestTrace, fill_ratio: float | None = None) -> SummaryRow:
    n = len(trace)
    if n == 0:
        raise ContractViolation("empty trajectory")
    h, t, c = trace.h_a, trace.t_a, trace.c_a
    short = n < 2
    confidence = float(np.mean(np.where(np.abs(h - t) < c, 1.0, -1.0)))
    return SummaryRow(
        final_score=float(trace.score[-1]),
        behavior_ccc=math.nan if short else ccc(trace.score_mean, trace.t_score),
        mean_arousal=float(np.mean(h)),
        arousal_ccc=math.nan if short else ccc(h, t),
        arousal_deviation=float(np.mean(trace.sigma)),
        confidence=confidence,
        archive_fill_pct=math.nan if fill_ratio is None else 100.0 * fill_ratio,
        time_offroad_pct=100.0 * float(np.mean(trace.offroad)),
        average_speed=float(np.mean(trace.speed)),
    )


def summarize(best, target, archive=None, trace: BestTrace | None = None, replay=None) -> SummaryRow:
    """Summary of a best cell.

    ``trace`` is the per-window replay of ``best``; when omitted, ``replay``
    (a callable record -> BestTrace) produces it. ``target`` supplies t_a and
    c_a and is checked against the trace.
    """
    if trace is None:
        if replay is None:
            raise ContractViolation("summarize needs either a trace or a replay function")
        trace = replay(best)
    n = len(trace)
    if n != best.length:
        raise ContractViolation("trace length differs from the trajectory length")
    if not (np.array_equal(trace.t_a, target.mean[:n]) and np.array_equal(trace.c_a, target.ci[:n])):
        raise ContractViolation("trace was built against a different target")
    return summarize_trace(trace, None if archive is None else archive.fill_ratio())


def mean_ci(values) -> tuple:
    """Mean and 95% CI half-width (1.96 s / sqrt(n)); NaNs are ignored."""
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=np.float64)
    if len(v) == 0:
        return math.nan, math.nan
    if len(v) == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(1.96 * v.std(ddof=1) / math.sqrt(len(v)))
