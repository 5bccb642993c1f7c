"""Demonstration datasets: parsing, per-session normalization, the expert
target trace, action frequencies, and a synthetic expert generator.

On-disk layout of a dataset directory::

    manifest.json
    session_<id>.csv         window, f0..f{F-1}, gas, steer, arousal_raw
    session_<id>.truth.csv   window, g   (synthetic sets only)
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .environment import (
    ALL_ACTIONS,
    C_HW,
    C_S0,
    N_FEATURES,
    S_HEAD,
    S_LAT,
    S_OPP,
    S_SEG,
    S_SPEED,
    S_T,
    Action,
    MicroRally,
    _point_at,
    _segment_of_arc,
    _wrap,
)
from .errors import GenerationError, InsufficientDataError, ParseError

log = logging.getLogger(__name__)

HORIZON = 360
CI_Z = 1.96


@dataclass
class DemoSession:
    session_id: str
    features: np.ndarray  # (n, F)
    actions: np.ndarray  # (n, 2) int: gas, steer
    arousal_raw: np.ndarray
    arousal: np.ndarray  # per-session min-max normalized
    truth: np.ndarray | None = None

    @property
    def n_windows(self) -> int:
        return len(self.arousal)


@dataclass(frozen=True)
class TargetTrace:
    mean: np.ndarray
    std: np.ndarray
    ci: np.ndarray
    count: np.ndarray

    def __len__(self):
        return len(self.mean)


@dataclass(frozen=True)
class ActionFrequency:
    """Probabilities indexed by action code ``(gas + 1) * 3 + (steer + 1)``."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = self.probabilities
        if p.shape != (9,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("action frequencies must be 9 non-negative values summing to 1")

    def of(self, action: Action) -> float:
        return float(self.probabilities[action.code])

    def as_dict(self) -> dict:
        return {f"{a.gas},{a.steer}": float(self.probabilities[a.code]) for a in ALL_ACTIONS}


def normalize(raw) -> np.ndarray:
    """Per-session min-max scaling; a constant trace maps to 0.5."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        warnings.warn("constant arousal trace; normalizing to 0.5", stacklevel=2)
        return np.full_like(raw, 0.5)
    return (raw - lo) / (hi - lo)


def _header(n_features):
    return ["window", *(f"f{i}" for i in range(n_features)), "gas", "steer", "arousal_raw"]


def _parse_float(text, path, line):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, line, f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ParseError(path, line, f"non-finite value: {text!r}")
    return v


def _parse_action(text, path, line, name):
    v = _parse_float(text, path, line)
    if v not in (-1.0, 0.0, 1.0):
        raise ParseError(path, line, f"{name} must be -1, 0 or 1, got {text!r}")
    return int(v)


def load_session(path, max_windows: int = HORIZON) -> DemoSession:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(path, 1, "empty file")
    header = rows[0]
    n_features = len(header) - 4
    if n_features < 1 or header != _header(n_features):
        raise ParseError(path, 1, "header must be: window, f0..f{F-1}, gas, steer, arousal_raw")
    feats, acts, raw = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} columns, got {len(row)}")
        window = _parse_float(row[0], path, lineno)
        if window != len(feats):
            raise ParseError(path, lineno, f"expected window {len(feats)}, got {row[0]}")
        feats.append([_parse_float(v, path, lineno) for v in row[1:1 + n_features]])
        acts.append((_parse_action(row[-3], path, lineno, "gas"), _parse_action(row[-2], path, lineno, "steer")))
        raw.append(_parse_float(row[-1], path, lineno))
    if not feats:
        raise ParseError(path, 2, "session has no windows")
    if len(feats) > max_windows:
        raise ParseError(path, len(feats) + 1, f"session longer than {max_windows} windows")
    sid = path.name[len("session_"):-len(".csv")]
    raw_arr = np.array(raw)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        norm = normalize(raw_arr)
    if caught:
        warnings.warn(f"{path.name}: constant arousal trace; normalized to 0.5", stacklevel=2)

    truth = None
    truth_path = path.with_name(f"session_{sid}.truth.csv")
    if truth_path.exists():
        with truth_path.open(newline="") as fh:
            t_rows = list(csv.reader(fh))
        if not t_rows or t_rows[0] != ["window", "g"]:
            raise ParseError(truth_path, 1, "header must be: window, g")
        truth = np.array([_parse_float(r[1], truth_path, i) for i, r in enumerate(t_rows[1:], start=2)])
        if len(truth) != len(feats):
            raise ParseError(truth_path, len(t_rows), "truth length differs from session length")
    return DemoSession(sid, np.array(feats), np.array(acts, dtype=np.int64), raw_arr, norm, truth)


def load_dataset(path, max_windows: int = HORIZON) -> list:
    """Load every ``session_<id>.csv`` in a directory, ordered by id."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {path}")
    files = sorted(p for p in path.glob("session_*.csv") if not p.name.endswith(".truth.csv"))
    if not files:
        raise FileNotFoundError(f"no session_*.csv files in {path}")
    sessions = [load_session(p, max_windows) for p in files]
    widths = {s.features.shape[1] for s in sessions}
    if len(widths) != 1:
        raise ParseError(files[0], 1, f"sessions disagree on feature count: {sorted(widths)}")
    return sessions


def target_trace(sessions, horizon: int = HORIZON) -> TargetTrace:
    """Per-window mean, sample std and 95% CI half-width over sessions."""
    if len(sessions) < 2:
        raise InsufficientDataError("the target trace needs at least two sessions")
    mean = np.zeros(horizon)
    std = np.zeros(horizon)
    count = np.zeros(horizon, dtype=np.int64)
    longest = min(max(s.n_windows for s in sessions), horizon)
    for i in range(longest):
        vals = np.array([s.arousal[i] for s in sessions if s.n_windows > i])
        count[i] = len(vals)
        mean[i] = vals.mean()
        std[i] = vals.std(ddof=1) if len(vals) > 1 else 0.0
    ci = np.zeros(horizon)
    populated = count > 0
    ci[populated] = CI_Z * std[populated] / np.sqrt(count[populated])
    mean[longest:] = mean[longest - 1]
    std[longest:] = std[longest - 1]
    ci[longest:] = ci[longest - 1]
    count[longest:] = count[longest - 1]
    return TargetTrace(mean, std, ci, count)


def mean_score_trace(sessions, max_score: int, horizon: int = HORIZON) -> np.ndarray:
    """Experts' mean score-over-time; a finished session holds its final score."""
    out = np.zeros(horizon)
    for s in sessions:
        out += score_series(s.features[:, 8] * max_score, horizon)
    return out / len(sessions)


def score_series(window_scores, horizon: int = HORIZON) -> np.ndarray:
    """Pad a per-window score series to ``horizon`` with its final value."""
    series = np.asarray(window_scores, dtype=np.float64)[:horizon]
    out = np.empty(horizon)
    out[:len(series)] = series
    out[len(series):] = np.round(series[-1]) if len(series) else 0.0
    return out


def action_frequencies(sessions) -> ActionFrequency:
    if not sessions:
        raise InsufficientDataError("action frequencies need at least one session")
    counts = np.zeros(9)
    for s in sessions:
        codes = (s.actions[:, 0] + 1) * 3 + (s.actions[:, 1] + 1)
        counts += np.bincount(codes, minlength=9)
    return ActionFrequency(counts / counts.sum())


# ---------------------------------------------------------------------------
# synthetic experts


@dataclass
class SyntheticConfig:
    sessions: int = 27
    noise_sigma: float = 0.05
    distort: bool = True
    base: float = 0.3
    w_offroad: float = 0.4
    w_curve: float = 0.3
    w_proximity: float = 0.2
    lane_straight: tuple = (-3.5, -3.5)
    corner_cut: tuple = (0.6, 0.6)
    steer_noise: tuple = (0.01, 0.03)
    lift_prob: tuple = (0.0, 0.01)
    lookahead: tuple = (22.0, 22.0)
    avoid_range: float = 60.0  # arc distance at which experts start passing a slower car
    avoid_gap: float = 5.0  # lateral clearance kept from that car
    follow_gap: float = 12.0  # lift off behind a slower car closer than this
    scale: tuple = (0.5, 2.0)
    offset: tuple = (-1.0, 1.0)


@dataclass
class ExpertProfile:
    lane_straight: float
    corner_cut: float
    steer_noise: float
    lift_prob: float
    lookahead: float
    scale: float
    offset: float


def _draw_profile(cfg: SyntheticConfig, rng) -> ExpertProfile:
    u = lambda lo_hi: float(rng.uniform(*lo_hi))
    profile = ExpertProfile(u(cfg.lane_straight), u(cfg.corner_cut), u(cfg.steer_noise),
                            u(cfg.lift_prob), u(cfg.lookahead), u(cfg.scale), u(cfg.offset))
    if not cfg.distort:
        profile.scale, profile.offset = 1.0, 0.0
    return profile


def expert_action(env: MicroRally, state, profile: ExpertProfile, cfg: SyntheticConfig, rng) -> Action:
    """Pure-pursuit waypoint follower with discrete steering and per-session noise."""
    segs = env.segs
    seg = int(state[S_SEG])
    t = min(max(state[S_T], 0.0), segs[seg, 1])
    s_ahead = (segs[seg, C_S0] + t + profile.lookahead) % env.track.length
    k = _segment_of_arc(segs, s_ahead)
    shape = env.track.segments[k].shape
    if shape == "curve-left":
        lane = profile.corner_cut * segs[k, C_HW]
    elif shape == "curve-right":
        lane = -profile.corner_cut * segs[k, C_HW]
    else:
        lane = profile.lane_straight
    s_car = segs[seg, C_S0] + t
    blocked = False
    for j in range(env.opp.shape[0]):
        gap = (state[S_OPP + j] - s_car) % env.track.length
        o_lane = env.opp[j, 0]
        if gap >= cfg.avoid_range:
            continue
        if gap < cfg.follow_gap and abs(state[S_LAT] - o_lane) < 0.5 * cfg.avoid_gap:
            blocked = blocked or state[S_SPEED] > env.opp[j, 1]
        crossing = (lane - o_lane) * (state[S_LAT] - o_lane) < 0.0
        if crossing or abs(lane - o_lane) < cfg.avoid_gap:
            # pass on the side the car is already on, unless that side leaves the road
            side = 1.0 if state[S_LAT] > o_lane else -1.0
            if abs(o_lane + side * cfg.avoid_gap) > segs[k, C_HW] - 1.0:
                side = -side
            lane = o_lane + side * cfg.avoid_gap
    tx, ty = _point_at(segs, k, s_ahead - segs[k, C_S0], lane)
    err = _wrap(math.atan2(ty - state[1], tx - state[0]) - state[S_HEAD])
    ph = env.track.physics
    step = ph.omega * max(state[S_SPEED], 1.0) / ph.v_max * ph.window_s
    steer = 0
    if err > 0.5 * step:
        steer = 1
    elif err < -0.5 * step:
        steer = -1
    if rng.random() < profile.steer_noise:
        steer = int(rng.integers(-1, 2))
    gas = 0 if blocked or rng.random() < profile.lift_prob else 1
    return Action(gas, steer)


def ground_truth(env: MicroRally, state, feat, cfg: SyntheticConfig, noise: float) -> float:
    in_curve = 1.0 if env.segment_is_curve_or_loop(int(state[S_SEG])) else 0.0
    g = cfg.base + cfg.w_offroad * feat[5] + cfg.w_curve * in_curve + cfg.w_proximity * feat[11] + noise
    return min(max(g, 0.0), 1.0)


def simulate_expert(env: MicroRally, cfg: SyntheticConfig, rng):
    """Play one scripted session. Returns (features, actions, g, profile)."""
    profile = _draw_profile(cfg, rng)
    snap = env.reset()
    feats, acts, g = [], [], []
    terminal = False
    while not terminal:
        state = env.to_state(snap)
        action = expert_action(env, state, profile, cfg, rng)
        snap, f, _, terminal = env.tick(snap, action)
        noise = float(rng.normal(0.0, cfg.noise_sigma)) if cfg.noise_sigma > 0 else 0.0
        feats.append(f)
        acts.append((action.gas, action.steer))
        g.append(ground_truth(env, env.to_state(snap), f, cfg, noise))
    final = env.describe(snap)
    if final.score < env.max_score:
        raise GenerationError(f"expert controller finished with score {final.score} after {final.window} windows")
    return np.array(feats), np.array(acts, dtype=np.int64), np.array(g), profile


def _fmt(v) -> str:
    return repr(float(v))


def write_session(directory: Path, sid: str, features, actions, raw, truth=None) -> Path:
    path = directory / f"session_{sid}.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(features.shape[1]))
        for i, (f, a, r) in enumerate(zip(features, actions, raw)):
            w.writerow([i, *(_fmt(v) for v in f), int(a[0]), int(a[1]), _fmt(r)])
    if truth is not None:
        with (directory / f"session_{sid}.truth.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["window", "g"])
            for i, v in enumerate(truth):
                w.writerow([i, _fmt(v)])
    return path


def generate_synthetic(out_dir, config: SyntheticConfig | None = None, seed: int = 0,
                       env: MicroRally | None = None) -> dict:
    """Write a synthetic expert dataset and return its manifest."""
    cfg = config or SyntheticConfig()
    env = env or MicroRally()
    if cfg.sessions < 1:
        raise ValueError("need at least one session")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(2, len(str(cfg.sessions - 1)))
    entries = []
    for i in range(cfg.sessions):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        feats, acts, g, profile = simulate_expert(env, cfg, rng)
        raw = profile.scale * g + profile.offset
        sid = f"{i:0{width}d}"
        write_session(out, sid, feats, acts, raw, g)
        entries.append({"id": sid, "file": f"session_{sid}.csv", "truth": f"session_{sid}.truth.csv",
                        "windows": len(g), "profile": asdict(profile)})
        log.debug("session %s: %d windows", sid, len(g))
    manifest = {
        "format": 1,
        "n_features": N_FEATURES,
        "horizon": env.horizon,
        "seed": seed,
        "track": env.track.name,
        "generation": asdict(cfg),
        "sessions": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
