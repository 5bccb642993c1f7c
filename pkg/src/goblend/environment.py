"""MicroRally: a deterministic fixed-timestep racing environment.

The car is a point with a speed and a heading. Each call to ``tick`` advances
one 250 ms window made of ``n_sub`` fixed substeps; the returned feature
vector is the substep average over that window. All state lives in a flat
float64 vector whose raw bytes are the snapshot, so restoring a snapshot and
replaying the same actions reproduces every later snapshot bit for bit.

The numeric kernels are compiled with numba (no fastmath, no parallel
reductions) so the floating point evaluation order is fixed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import ConfigurationError, ContractViolation

TRACK_FORMAT = 1
N_FEATURES = 16

FEATURE_NAMES = (
    "pos_x",
    "pos_y",
    "heading_sin",
    "heading_cos",
    "speed",
    "offroad",
    "segment_fraction",
    "lap_fraction",
    "score_fraction",
    "next_checkpoint_distance",
    "nearest_opponent_distance",
    "proximity",
    "prev_gas",
    "prev_steer",
    "collision",
    "elapsed_fraction",
)

# segment shapes
STRAIGHT, CURVE_LEFT, CURVE_RIGHT, LOOP = 0, 1, 2, 3
SHAPE_CODES = {"straight": STRAIGHT, "curve-left": CURVE_LEFT, "curve-right": CURVE_RIGHT, "loop": LOOP}
SHAPE_NAMES = {v: k for k, v in SHAPE_CODES.items()}

# segment table columns
C_SHAPE, C_LEN, C_HW, C_X0, C_Y0, C_H0, C_COS, C_SIN, C_CX, C_CY, C_R, C_S0, C_CP = range(13)
N_SEG_COLS = 13

# physics/parameter vector slots
(P_AGAS, P_DRAG, P_VMAX, P_VOFF, P_OMEGA, P_NSUB, P_DT, P_HORIZON, P_MAXSCORE, P_GRASS,
 P_COLL, P_ORANGE, P_XMIN, P_XMAX, P_YMIN, P_YMAX, P_LENGTH, P_LAPS, P_NCP,
 P_TURNMIN, P_WALLKEEP) = range(21)
N_PARAMS = 21

# state vector slots; opponent arc positions follow from S_OPP onwards
(S_X, S_Y, S_HEAD, S_SPEED, S_SEG, S_T, S_LAT, S_SCORE, S_LAP, S_NEXTCP, S_WINDOW,
 S_TERMINAL, S_GAS, S_STEER, S_COLLIDED, S_OFFROAD, S_PROX) = range(17)
S_OPP = 17

SPEED_BUCKETS = ("slow", "fast")
SUBSEGMENTS = ("left", "right", "left-offroad", "right-offroad")
PROXIMITY = ("far", "near")
N_ROTATION_BANDS = 6


@dataclass(frozen=True)
class Action:
    """One window of input. Both components take values in {-1, 0, 1}."""

    gas: int
    steer: int

    def __post_init__(self):
        for name in ("gas", "steer"):
            v = getattr(self, name)
            if isinstance(v, bool) or v not in (-1, 0, 1):
                raise ValueError(f"{name} must be -1, 0 or 1, got {v!r}")

    @property
    def code(self) -> int:
        return (self.gas + 1) * 3 + (self.steer + 1)

    @classmethod
    def from_code(cls, code: int) -> "Action":
        if not 0 <= code <= 8:
            raise ValueError(f"action code out of range: {code}")
        return cls(code // 3 - 1, code % 3 - 1)


ALL_ACTIONS = tuple(Action.from_code(c) for c in range(9))


class CellKey(NamedTuple):
    speed: str
    rotation: int
    segment: int
    subsegment: str
    lap: int
    proximity: str

    def encode(self, n_segments: int) -> int:
        code = SPEED_BUCKETS.index(self.speed)
        code = code * N_ROTATION_BANDS + self.rotation
        code = code * n_segments + self.segment
        code = code * len(SUBSEGMENTS) + SUBSEGMENTS.index(self.subsegment)
        code = code * 2 + (self.lap - 1)
        return code * 2 + PROXIMITY.index(self.proximity)

    @classmethod
    def decode(cls, code: int, n_segments: int) -> "CellKey":
        code, prox = divmod(code, 2)
        code, lap = divmod(code, 2)
        code, sub = divmod(code, len(SUBSEGMENTS))
        code, seg = divmod(code, n_segments)
        speed, rot = divmod(code, N_ROTATION_BANDS)
        return cls(SPEED_BUCKETS[speed], rot, seg, SUBSEGMENTS[sub], lap + 1, PROXIMITY[prox])


@dataclass(frozen=True)
class Physics:
    a_gas: float = 15.0
    drag: float = 0.2
    v_max: float = 30.0
    v_off: float = 15.0
    omega: float = 1.0
    n_sub: int = 10
    window_s: float = 0.25
    horizon_windows: int = 360
    laps: int = 2
    grass_width: float = 10.0
    collision_radius: float = 2.0
    opponent_range: float = 100.0
    turn_floor: float = 0.3  # steering authority kept at standstill, as a fraction of omega
    wall_keep: float = 0.0  # fraction of speed kept after hitting the barrier

    def __post_init__(self):
        if not 0 < self.v_off < self.v_max:
            raise ConfigurationError("physics requires 0 < v_off < v_max")
        if self.n_sub < 1 or self.horizon_windows < 1 or self.laps < 1:
            raise ConfigurationError("n_sub, horizon_windows and laps must be >= 1")
        for name in ("a_gas", "omega", "window_s", "collision_radius", "opponent_range"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"physics.{name} must be positive")
        if self.drag < 0 or self.grass_width < 0:
            raise ConfigurationError("physics.drag and physics.grass_width must be >= 0")
        if not 0 <= self.turn_floor <= 1 or not 0 <= self.wall_keep <= 1:
            raise ConfigurationError("physics.turn_floor and physics.wall_keep must lie in [0, 1]")

    @property
    def dt(self) -> float:
        return self.window_s / self.n_sub


@dataclass(frozen=True)
class Segment:
    shape: str
    length: float
    half_width: float
    checkpoint: bool = False
    radius: float = 0.0

    @property
    def is_curve(self) -> bool:
        return self.shape in ("curve-left", "curve-right")


@dataclass(frozen=True)
class Opponent:
    lane: float  # lateral offset from the centerline, left positive
    speed: float
    start: float  # arc position at t = 0


@dataclass
class TrackSpec:
    segments: list
    opponents: list
    physics: Physics = field(default_factory=Physics)
    start_offset: float = 2.0
    start_lane: float = -4.0
    name: str = "track"

    def __post_init__(self):
        self._validate()
        self._build()

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @property
    def checkpoints_per_lap(self) -> int:
        return len(self.checkpoint_segments)

    @property
    def max_score(self) -> int:
        return self.checkpoints_per_lap * self.physics.laps

    @property
    def key_space_size(self) -> int:
        return len(SPEED_BUCKETS) * N_ROTATION_BANDS * self.n_segments * len(SUBSEGMENTS) * 2 * 2

    def _validate(self):
        if len(self.segments) < 2:
            raise ConfigurationError("track needs at least two segments")
        for i, seg in enumerate(self.segments):
            if seg.shape not in SHAPE_CODES:
                raise ConfigurationError(f"segment {i}: unknown shape {seg.shape!r}")
            if seg.length <= 0 or seg.half_width <= 0:
                raise ConfigurationError(f"segment {i}: length and half_width must be positive")
            if seg.is_curve:
                if seg.radius <= seg.half_width + self.physics.grass_width:
                    raise ConfigurationError(f"segment {i}: radius must exceed half_width + grass_width")
                if seg.length / seg.radius > math.pi / 2 + 1e-12:
                    raise ConfigurationError(f"segment {i}: curves may turn at most 90 degrees")
        cps = [i for i, s in enumerate(self.segments) if s.checkpoint]
        if len(cps) != 8:
            raise ConfigurationError(f"track must flag exactly 8 checkpoint segments per lap, found {len(cps)}")
        if cps[-1] != len(self.segments) - 1:
            raise ConfigurationError("the last segment must carry the final checkpoint (the start line)")
        self.checkpoint_segments = tuple(cps)
        if not self.opponents:
            raise ConfigurationError("track needs at least one opponent")
        if not 0 <= self.start_offset < self.segments[0].length:
            raise ConfigurationError("start offset must lie on segment 0")
        if abs(self.start_lane) > self.segments[0].half_width:
            raise ConfigurationError("start lane must be on the road")

    def _build(self):
        n = len(self.segments)
        table = np.zeros((n, N_SEG_COLS))
        x, y, h, s = 0.0, 0.0, 0.0, 0.0
        for i, seg in enumerate(self.segments):
            c, sn = math.cos(h), math.sin(h)
            row = table[i]
            row[C_SHAPE] = SHAPE_CODES[seg.shape]
            row[C_LEN] = seg.length
            row[C_HW] = seg.half_width
            row[C_X0], row[C_Y0], row[C_H0] = x, y, h
            row[C_COS], row[C_SIN] = c, sn
            row[C_S0] = s
            row[C_CP] = 1.0 if seg.checkpoint else 0.0
            if seg.is_curve:
                sign = 1.0 if seg.shape == "curve-left" else -1.0
                cx, cy = x - sign * seg.radius * sn, y + sign * seg.radius * c
                row[C_CX], row[C_CY], row[C_R] = cx, cy, seg.radius
                phi = sign * seg.length / seg.radius
                rx, ry = x - cx, y - cy
                x = cx + rx * math.cos(phi) - ry * math.sin(phi)
                y = cy + rx * math.sin(phi) + ry * math.cos(phi)
                h = h + phi
            else:
                x, y = x + seg.length * c, y + seg.length * sn
            s += seg.length
        turn = h / (2 * math.pi)
        if abs(x) > 1e-6 or abs(y) > 1e-6 or abs(turn - round(turn)) > 1e-9 or round(turn) == 0:
            raise ConfigurationError(
                f"segments do not form a closed loop (end at x={x:.6f}, y={y:.6f}, turned {math.degrees(h):.3f} deg)"
            )
        self.length = s
        self.table = table
        self.checkpoint_array = np.array(self.checkpoint_segments, dtype=np.int64)
        self.opponent_array = np.array([[o.lane, o.speed, o.start] for o in self.opponents])
        for j, o in enumerate(self.opponents):
            if abs(o.lane) > self.segments[0].half_width or o.speed <= 0:
                raise ConfigurationError(f"opponent {j}: lane must be on the road and speed positive")

        margin = max(sg.half_width for sg in self.segments) + self.physics.grass_width
        pts = []
        for i in range(n):
            for t in np.linspace(0.0, table[i, C_LEN], 9):
                for lat in (-margin, margin):
                    pts.append(_point_at(table, i, t, lat))
        pts = np.array(pts)
        xmin, ymin = pts.min(axis=0)
        xmax, ymax = pts.max(axis=0)

        ph = self.physics
        prm = np.zeros(N_PARAMS)
        prm[P_AGAS], prm[P_DRAG], prm[P_VMAX], prm[P_VOFF] = ph.a_gas, ph.drag, ph.v_max, ph.v_off
        prm[P_OMEGA], prm[P_NSUB], prm[P_DT] = ph.omega, ph.n_sub, ph.dt
        prm[P_HORIZON], prm[P_MAXSCORE], prm[P_GRASS] = ph.horizon_windows, self.max_score, ph.grass_width
        prm[P_COLL], prm[P_ORANGE] = ph.collision_radius, ph.opponent_range
        prm[P_XMIN], prm[P_XMAX], prm[P_YMIN], prm[P_YMAX] = xmin, xmax, ymin, ymax
        prm[P_LENGTH], prm[P_LAPS], prm[P_NCP] = s, ph.laps, len(self.checkpoint_segments)
        prm[P_TURNMIN], prm[P_WALLKEEP] = ph.turn_floor, ph.wall_keep
        self.params = prm

    def to_dict(self) -> dict:
        segs = []
        for seg in self.segments:
            d = {"shape": seg.shape, "length": seg.length, "half_width": seg.half_width}
            if seg.is_curve:
                d["radius"] = seg.radius
            if seg.checkpoint:
                d["checkpoint"] = True
            segs.append(d)
        return {
            "format": TRACK_FORMAT,
            "name": self.name,
            "physics": {k: getattr(self.physics, k) for k in Physics.__dataclass_fields__},
            "start": {"offset": self.start_offset, "lane": self.start_lane},
            "segments": segs,
            "opponents": [{"lane": o.lane, "speed": o.speed, "start": o.start} for o in self.opponents],
        }


def parse_track(doc: dict, name: str = "track") -> TrackSpec:
    if not isinstance(doc, dict):
        raise ConfigurationError("track file must contain a JSON object")
    if doc.get("format") != TRACK_FORMAT:
        raise ConfigurationError(f"unsupported track format {doc.get('format')!r}, expected {TRACK_FORMAT}")
    try:
        physics = Physics(**doc.get("physics", {}))
    except TypeError as exc:
        raise ConfigurationError(f"invalid physics block: {exc}") from None
    segments = []
    for i, raw in enumerate(doc.get("segments", [])):
        try:
            shape = raw["shape"]
            radius = float(raw.get("radius", 0.0))
            if "angle_deg" in raw:
                length = radius * math.radians(float(raw["angle_deg"]))
            else:
                length = float(raw["length"])
            segments.append(Segment(shape, length, float(raw["half_width"]), bool(raw.get("checkpoint", False)), radius))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"segment {i}: {exc!r}") from None
    try:
        opponents = [Opponent(float(o["lane"]), float(o["speed"]), float(o.get("start", 0.0)))
                     for o in doc.get("opponents", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"opponents: {exc!r}") from None
    start = doc.get("start", {})
    return TrackSpec(segments, opponents, physics, float(start.get("offset", 2.0)),
                     float(start.get("lane", -4.0)), doc.get("name", name))


def load_track(path=None) -> TrackSpec:
    """Load a track JSON file; ``None`` loads the bundled default track."""
    if path is None:
        text = resources.files("goblend").joinpath("data/default_track.json").read_text()
        return parse_track(json.loads(text), "default")
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read track file {path}: {exc}") from None
    return parse_track(doc, path.stem)


def default_track() -> TrackSpec:
    return load_track(None)


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _wrap(a):
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


@njit(cache=True)
def _project(segs, i, x, y):
    shape = segs[i, C_SHAPE]
    if shape == CURVE_LEFT or shape == CURVE_RIGHT:
        cx = segs[i, C_CX]
        cy = segs[i, C_CY]
        r = segs[i, C_R]
        rx = segs[i, C_X0] - cx
        ry = segs[i, C_Y0] - cy
        vx = x - cx
        vy = y - cy
        phi = math.atan2(rx * vy - ry * vx, rx * vx + ry * vy)
        dist = math.sqrt(vx * vx + vy * vy)
        if shape == CURVE_LEFT:
            return phi * r, r - dist
        return -phi * r, dist - r
    dx = x - segs[i, C_X0]
    dy = y - segs[i, C_Y0]
    c = segs[i, C_COS]
    s = segs[i, C_SIN]
    return dx * c + dy * s, dy * c - dx * s


@njit(cache=True)
def _point_at(segs, i, t, lat):
    shape = segs[i, C_SHAPE]
    if shape == CURVE_LEFT or shape == CURVE_RIGHT:
        cx = segs[i, C_CX]
        cy = segs[i, C_CY]
        r = segs[i, C_R]
        rx = (segs[i, C_X0] - cx) / r
        ry = (segs[i, C_Y0] - cy) / r
        if shape == CURVE_LEFT:
            phi = t / r
            rad = r - lat
        else:
            phi = -t / r
            rad = r + lat
        c = math.cos(phi)
        s = math.sin(phi)
        return cx + (rx * c - ry * s) * rad, cy + (rx * s + ry * c) * rad
    c = segs[i, C_COS]
    s = segs[i, C_SIN]
    return segs[i, C_X0] + t * c - lat * s, segs[i, C_Y0] + t * s + lat * c


@njit(cache=True)
def _tangent(segs, i, t):
    shape = segs[i, C_SHAPE]
    if shape == CURVE_LEFT:
        return segs[i, C_H0] + t / segs[i, C_R]
    if shape == CURVE_RIGHT:
        return segs[i, C_H0] - t / segs[i, C_R]
    return segs[i, C_H0]


@njit(cache=True)
def _segment_of_arc(segs, s):
    n = segs.shape[0]
    for i in range(n - 1, -1, -1):
        if s >= segs[i, C_S0]:
            return i
    return 0


@njit(cache=True)
def _side(lat, hw):
    # 0 left, 1 right, 2 left-offroad, 3 right-offroad
    code = 0 if lat >= 0.0 else 1
    if abs(lat) > hw:
        code += 2
    return code


@njit(cache=True)
def _opponents(state, segs, opp, prm, time, px, py, pseg, pside):
    """Advance opponent arc positions to ``time``; returns (nearest distance, proximity, collided)."""
    length = prm[P_LENGTH]
    nearest = 1e300
    prox = 0.0
    hit = False
    for j in range(opp.shape[0]):
        s = (opp[j, 2] + opp[j, 1] * time) % length
        state[S_OPP + j] = s
        k = _segment_of_arc(segs, s)
        ox, oy = _point_at(segs, k, s - segs[k, C_S0], opp[j, 0])
        d = math.sqrt((ox - px) * (ox - px) + (oy - py) * (oy - py))
        if d < nearest:
            nearest = d
        if d < prm[P_COLL]:
            hit = True
        if k == pseg and _side(opp[j, 0], segs[k, C_HW]) == pside:
            prox = 1.0
    return nearest, prox, hit


@njit(cache=True)
def init_state(segs, opp, prm, start_offset, start_lane):
    state = np.zeros(S_OPP + opp.shape[0])
    x, y = _point_at(segs, 0, start_offset, start_lane)
    state[S_X] = x
    state[S_Y] = y
    state[S_HEAD] = segs[0, C_H0]
    state[S_SEG] = 0.0
    state[S_T] = start_offset
    state[S_LAT] = start_lane
    state[S_LAP] = 1.0
    _, prox, _ = _opponents(state, segs, opp, prm, 0.0, x, y, 0, _side(start_lane, segs[0, C_HW]))
    state[S_PROX] = prox
    return state


@njit(cache=True)
def tick_kernel(state, gas, steer, segs, cps, opp, prm, feat):
    """Advance ``state`` in place by one window; fills ``feat`` and returns the score delta."""
    nsub = int(prm[P_NSUB])
    dt = prm[P_DT]
    vmax = prm[P_VMAX]
    nseg = segs.shape[0]
    ncp = int(prm[P_NCP])
    maxscore = prm[P_MAXSCORE]
    length = prm[P_LENGTH]
    horizon = prm[P_HORIZON]
    t_total = horizon * dt * nsub
    for f in range(feat.shape[0]):
        feat[f] = 0.0

    x = state[S_X]
    y = state[S_Y]
    head = state[S_HEAD]
    v = state[S_SPEED]
    seg = int(state[S_SEG])
    score = state[S_SCORE]
    nextcp = int(state[S_NEXTCP])
    window = state[S_WINDOW]
    score0 = score
    collided_any = 0.0
    t = state[S_T]
    lat = state[S_LAT]
    prox = state[S_PROX]
    off = state[S_OFFROAD]

    for j in range(nsub):
        v = v + (prm[P_AGAS] * gas - prm[P_DRAG] * v) * dt
        if v < 0.0:
            v = 0.0
        if v > vmax:
            v = vmax
        head = _wrap(head + prm[P_OMEGA] * steer * max(v / vmax, prm[P_TURNMIN]) * dt)
        x = x + v * math.cos(head) * dt
        y = y + v * math.sin(head) * dt

        t, lat = _project(segs, seg, x, y)
        for _ in range(8):
            if t > segs[seg, C_LEN]:
                if score < maxscore and seg == cps[nextcp]:
                    score += 1.0
                    nextcp = (nextcp + 1) % ncp
                seg = (seg + 1) % nseg
                t, lat = _project(segs, seg, x, y)
            elif t < 0.0:
                seg = (seg - 1) % nseg
                t, lat = _project(segs, seg, x, y)
            else:
                break

        hw = segs[seg, C_HW]
        limit = hw + prm[P_GRASS]
        if lat > limit or lat < -limit:
            # the barrier stops the car; heading is untouched
            lat = limit if lat > 0.0 else -limit
            x, y = _point_at(segs, seg, t, lat)
            v = v * prm[P_WALLKEEP]
        off = 1.0 if (lat > hw or lat < -hw) else 0.0
        if off > 0.0 and v > prm[P_VOFF]:
            v = prm[P_VOFF]

        time = (window * nsub + j + 1) * dt
        side = _side(lat, hw)
        nearest, prox, hit = _opponents(state, segs, opp, prm, time, x, y, seg, side)
        coll = 0.0
        if hit:
            v = 0.0
            coll = 1.0
            collided_any = 1.0

        tc = t
        if tc < 0.0:
            tc = 0.0
        elif tc > segs[seg, C_LEN]:
            tc = segs[seg, C_LEN]
        s_arc = segs[seg, C_S0] + tc
        if score < maxscore:
            k = cps[nextcp]
            cp_dist = (segs[k, C_S0] + segs[k, C_LEN] - s_arc) % length
        else:
            cp_dist = 0.0
        fx = (x - prm[P_XMIN]) / (prm[P_XMAX] - prm[P_XMIN])
        fy = (y - prm[P_YMIN]) / (prm[P_YMAX] - prm[P_YMIN])
        feat[0] += min(max(fx, 0.0), 1.0)
        feat[1] += min(max(fy, 0.0), 1.0)
        feat[2] += (math.sin(head) + 1.0) * 0.5
        feat[3] += (math.cos(head) + 1.0) * 0.5
        feat[4] += v / vmax
        feat[5] += off
        feat[6] += tc / segs[seg, C_LEN]
        feat[7] += s_arc / length
        feat[8] += score / maxscore
        feat[9] += cp_dist / length
        feat[10] += min(nearest / prm[P_ORANGE], 1.0)
        feat[11] += prox
        feat[12] += (gas + 1.0) * 0.5
        feat[13] += (steer + 1.0) * 0.5
        feat[14] += coll
        feat[15] += min(time / t_total, 1.0)

    for f in range(feat.shape[0]):
        feat[f] = feat[f] / nsub

    state[S_X] = x
    state[S_Y] = y
    state[S_HEAD] = head
    state[S_SPEED] = v
    state[S_SEG] = seg
    state[S_T] = t
    state[S_LAT] = lat
    state[S_SCORE] = score
    state[S_LAP] = min(1.0 + math.floor(score / ncp), prm[P_LAPS])
    state[S_NEXTCP] = nextcp
    state[S_WINDOW] = window + 1.0
    state[S_GAS] = gas
    state[S_STEER] = steer
    state[S_COLLIDED] = collided_any
    state[S_OFFROAD] = off
    state[S_PROX] = prox
    if state[S_WINDOW] >= horizon or score >= maxscore:
        state[S_TERMINAL] = 1.0
    return int(score - score0)


@njit(cache=True)
def key_kernel(state, segs, prm):
    """Integer cell code of a state; see ``CellKey.encode`` for the layout."""
    nseg = segs.shape[0]
    seg = int(state[S_SEG])
    fast = 1 if state[S_SPEED] >= 0.5 * prm[P_VMAX] else 0
    t = min(max(state[S_T], 0.0), segs[seg, C_LEN])
    rel = abs(_wrap(state[S_HEAD] - _tangent(segs, seg, t)))
    band = int(rel / (math.pi / 6.0))
    if band > 5:
        band = 5
    side = _side(state[S_LAT], segs[seg, C_HW])
    lap = int(state[S_LAP]) - 1
    prox = 1 if state[S_PROX] > 0.0 else 0
    return ((((fast * 6 + band) * nseg + seg) * 4 + side) * 2 + lap) * 2 + prox


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CarState:
    """Readable view of a snapshot."""

    x: float
    y: float
    heading: float
    speed: float
    segment: int
    segment_offset: float
    lateral: float
    score: int
    lap: int
    next_checkpoint: int
    window: int
    terminal: bool
    offroad: bool
    collided: bool
    proximity: bool
    opponents: tuple


class MicroRally:
    """Deterministic racing environment operating on byte snapshots."""

    def __init__(self, track: TrackSpec | None = None):
        self.track = track if track is not None else default_track()
        self.segs = self.track.table
        self.cps = self.track.checkpoint_array
        self.opp = self.track.opponent_array
        self.params = self.track.params
        self.state_size = S_OPP + len(self.track.opponents)
        self._reset_state = init_state(self.segs, self.opp, self.params,
                                       self.track.start_offset, self.track.start_lane)

    @property
    def n_segments(self) -> int:
        return self.track.n_segments

    @property
    def key_space_size(self) -> int:
        return self.track.key_space_size

    @property
    def max_score(self) -> int:
        return self.track.max_score

    @property
    def horizon(self) -> int:
        return self.track.physics.horizon_windows

    def reset(self) -> bytes:
        return self._reset_state.tobytes()

    def to_state(self, snapshot: bytes) -> np.ndarray:
        if not isinstance(snapshot, (bytes, bytearray)) or len(snapshot) != 8 * self.state_size:
            raise ContractViolation("snapshot does not belong to this environment")
        return np.frombuffer(snapshot, dtype=np.float64).copy()

    def tick(self, snapshot: bytes, action: Action):
        """Advance one window. Returns ``(snapshot, features, score_delta, terminal)``."""
        state = self.to_state(snapshot)
        if state[S_TERMINAL]:
            raise ContractViolation("tick called on a terminal snapshot")
        feat = np.empty(N_FEATURES)
        delta = tick_kernel(state, float(action.gas), float(action.steer),
                            self.segs, self.cps, self.opp, self.params, feat)
        return state.tobytes(), feat, delta, bool(state[S_TERMINAL])

    def key_code(self, snapshot: bytes) -> int:
        return int(key_kernel(self.to_state(snapshot), self.segs, self.params))

    def cell_key(self, snapshot: bytes) -> CellKey:
        return CellKey.decode(self.key_code(snapshot), self.n_segments)

    def decode_key(self, code: int) -> CellKey:
        return CellKey.decode(code, self.n_segments)

    def describe(self, snapshot: bytes) -> CarState:
        s = self.to_state(snapshot)
        return CarState(
            x=s[S_X], y=s[S_Y], heading=s[S_HEAD], speed=s[S_SPEED], segment=int(s[S_SEG]),
            segment_offset=s[S_T], lateral=s[S_LAT], score=int(s[S_SCORE]), lap=int(s[S_LAP]),
            next_checkpoint=int(s[S_NEXTCP]), window=int(s[S_WINDOW]), terminal=bool(s[S_TERMINAL]),
            offroad=bool(s[S_OFFROAD]), collided=bool(s[S_COLLIDED]), proximity=bool(s[S_PROX]),
            opponents=tuple(float(v) for v in s[S_OPP:]),
        )

    def is_terminal(self, snapshot: bytes) -> bool:
        return bool(self.to_state(snapshot)[S_TERMINAL])

    def replay(self, actions, snapshot: bytes | None = None):
        """Run ``actions`` (Action or code) from ``snapshot`` (default: reset).

        Returns the final snapshot and the stacked feature vectors.
        """
        snap = self.reset() if snapshot is None else snapshot
        feats = []
        for a in actions:
            if not isinstance(a, Action):
                a = Action.from_code(int(a))
            snap, f, _, _ = self.tick(snap, a)
            feats.append(f)
        return snap, np.array(feats).reshape(len(feats), N_FEATURES)

    def segment_is_curve_or_loop(self, segment: int) -> bool:
        return self.track.segments[segment].shape != "straight"
