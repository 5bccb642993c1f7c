"""The exploration loop and the frequency-weighted random baseline.

One iteration: weight the archive, draw a cell, restore its snapshot, take up
to ``burst`` actions drawn from the expert action frequencies, and offer the
cell reached after every action back to the archive.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from numba import njit

from . import demos
from .affect import (
    AFFECT_REWARDS,
    EPSILON,
    N_ACC,
    WEIGHTINGS,
    ArousalModel,
    accumulate,
    knn_kernel,
    reward_from_sums,
)
from .archive import Archive, CellRecord
from .environment import (
    N_FEATURES,
    S_SCORE,
    S_TERMINAL,
    S_WINDOW,
    Action,
    MicroRally,
    Physics,
    key_kernel,
    load_track,
    parse_track,
    tick_kernel,
)
from .errors import ConfigurationError, ContractViolation
from .metrics import BestTrace, SummaryRow, summarize
from .selection import STRATEGIES, compute_weights, sample_index

log = logging.getLogger(__name__)

CHANNELS = ("score",) + AFFECT_REWARDS
KINDS = ("goblend", "random")


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    kind: str = "goblend"
    channel: str = "score"
    selection: str = "uniform"
    iterations: int = 500_000
    burst: int = 25
    runs: int = 3
    k: int = 5
    eps: float = EPSILON
    weighting: str = "inverse"
    dataset: str = "data/synthetic"
    track: str | None = None
    physics: dict = field(default_factory=dict)
    verify_replay: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"{self.name}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.channel not in CHANNELS:
            raise ConfigurationError(f"{self.name}: channel must be one of {CHANNELS}, got {self.channel!r}")
        if self.selection not in STRATEGIES:
            raise ConfigurationError(f"{self.name}: selection must be one of {STRATEGIES}, got {self.selection!r}")
        if self.weighting not in WEIGHTINGS:
            raise ConfigurationError(f"{self.name}: weighting must be one of {WEIGHTINGS}")
        for name in ("iterations", "burst", "runs", "k"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigurationError(f"{self.name}: {name} must be an integer >= 1, got {v!r}")
        if not 0.0 <= self.verify_replay <= 1.0:
            raise ConfigurationError(f"{self.name}: verify_replay must lie in [0, 1]")
        unknown = set(self.physics) - {f.name for f in fields(Physics)}
        if unknown:
            raise ConfigurationError(f"{self.name}: unknown physics keys {sorted(unknown)}")

    @property
    def affect_reward(self) -> str:
        """Affect function stored as ``r_a``; score runs keep R_a for selection."""
        return "ra" if self.channel == "score" else self.channel

    @property
    def archive_channel(self) -> str:
        return "r_b" if self.channel == "score" else "r_a"

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown experiment keys {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


class ExperimentData:
    """Everything a run reads but never mutates."""

    def __init__(self, config: ExperimentConfig, sessions=None):
        track = load_track(config.track)
        if config.physics:
            doc = track.to_dict()
            doc["physics"].update(config.physics)
            track = parse_track(doc, track.name)
        self.env = MicroRally(track)
        if sessions is None:
            sessions = demos.load_dataset(config.dataset, self.env.horizon)
        n_rows = sum(s.n_windows for s in sessions)
        if config.k > n_rows:
            raise ConfigurationError(f"k={config.k} exceeds the {n_rows} demonstration windows")
        if sessions[0].features.shape[1] != N_FEATURES:
            raise ConfigurationError(f"dataset has {sessions[0].features.shape[1]} features, environment emits {N_FEATURES}")
        self.sessions = sessions
        self.model = ArousalModel.from_sessions(sessions, k=config.k, eps=config.eps, weighting=config.weighting)
        self.target = demos.target_trace(sessions, self.env.horizon)
        self.freq = demos.action_frequencies(sessions)
        self.expert_score = demos.mean_score_trace(sessions, self.env.max_score, self.env.horizon)
        self._cum = np.cumsum(self.freq.probabilities)

    def sample_actions(self, rng, n: int) -> np.ndarray:
        codes = np.searchsorted(self._cum, rng.random(n) * self._cum[-1], side="right")
        codes = np.minimum(codes, 8)
        p = self.freq.probabilities
        for j in np.flatnonzero(p[codes] == 0.0):
            # a draw landing exactly on a boundary; move to the next allowed code
            c = codes[j]
            while p[c] == 0.0:
                c = (c + 1) % 9
            codes[j] = c
        return codes.astype(np.int64)

    def trace(self, trajectory) -> tuple:
        """Replay ``trajectory`` from reset; returns (BestTrace, final snapshot, sums)."""
        env, target = self.env, self.target
        snap = env.reset()
        sums = np.zeros(N_ACC)
        cols = {c: [] for c in ("h_a", "sigma", "score", "score_mean", "offroad", "speed")}
        for i, code in enumerate(trajectory):
            snap, feat, _, _ = env.tick(snap, Action.from_code(int(code)))
            est = self.model.estimate(feat)
            accumulate(sums, est.h_a, est.sigma, target.mean[i], target.ci[i])
            cols["h_a"].append(est.h_a)
            cols["sigma"].append(est.sigma)
            cols["score"].append(float(env.to_state(snap)[S_SCORE]))
            cols["score_mean"].append(feat[8] * env.max_score)
            cols["offroad"].append(feat[5])
            cols["speed"].append(feat[4] * env.track.physics.v_max)
        n = len(trajectory)
        trace = BestTrace(
            h_a=np.array(cols["h_a"]), sigma=np.array(cols["sigma"]),
            t_a=target.mean[:n].copy(), c_a=target.ci[:n].copy(),
            score=np.array(cols["score"]), score_mean=np.array(cols["score_mean"]),
            t_score=self.expert_score[:n].copy(), offroad=np.array(cols["offroad"]),
            speed=np.array(cols["speed"]),
        )
        return trace, snap, sums


@njit(cache=True)
def burst_kernel(state0, sums0, codes, segs, cps, opp, prm, Xp, perm, y, lo, hi, nodes, k, eps, inverse,
                 t_mean, t_ci, out_states, out_sums, out_keys):
    """Play ``codes`` from ``state0``, stopping at a terminal state.

    Row j of the outputs describes the cell reached after action j. Returns
    the number of actions taken.
    """
    nb_idx = np.empty(k, dtype=np.int64)
    nb_d2 = np.empty(k)
    feat = np.empty(Xp.shape[1])
    state = state0.copy()
    sums = sums0.copy()
    n = 0
    for j in range(codes.shape[0]):
        c = codes[j]
        i = int(state[S_WINDOW])
        tick_kernel(state, float(c // 3 - 1), float(c % 3 - 1), segs, cps, opp, prm, feat)
        h, s = knn_kernel(Xp, perm, y, lo, hi, nodes, feat, k, eps, inverse, nb_idx, nb_d2)
        accumulate(sums, h, s, t_mean[i], t_ci[i])
        out_states[j, :] = state
        out_sums[j, :] = sums
        out_keys[j] = key_kernel(state, segs, prm)
        n += 1
        if state[S_TERMINAL] > 0.0:
            break
    return n


@njit(cache=True)
def rollout_kernel(state0, codes, segs, cps, opp, prm):
    """Play ``codes`` without the surrogate; returns (final score, ticks)."""
    feat = np.empty(N_FEATURES)
    state = state0.copy()
    n = 0
    for j in range(codes.shape[0]):
        c = codes[j]
        tick_kernel(state, float(c // 3 - 1), float(c % 3 - 1), segs, cps, opp, prm, feat)
        n += 1
        if state[S_TERMINAL] > 0.0:
            break
    return state[S_SCORE], n


@dataclass
class RunResult:
    name: str
    kind: str
    seed: int
    channel: str
    selection: str
    best: CellRecord
    best_reward: float
    summary: SummaryRow
    trace: BestTrace
    fill_ratio: float | None
    archive_size: int | None
    iterations: int
    ticks: int
    progress: list
    wall_clock: float = 0.0
    archive: Archive | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        """Deterministic JSON view; wall-clock time is kept out on purpose."""
        return {
            "name": self.name,
            "kind": self.kind,
            "seed": self.seed,
            "channel": self.channel,
            "selection": self.selection,
            "best": {
                "r_b": self.best.r_b,
                "r_a": self.best.r_a,
                "length": self.best.length,
                "terminal": self.best.terminal,
                "c_seen": self.best.c_seen,
                "trajectory": list(self.best.trajectory),
            },
            "best_reward": self.best_reward,
            "summary": {k: _json_float(v) for k, v in self.summary.as_dict().items()},
            "fill_ratio": self.fill_ratio,
            "archive_size": self.archive_size,
            "archive_bound": None if self.archive is None else self.archive.bound,
            "iterations": self.iterations,
            "ticks": self.ticks,
            "progress": self.progress,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _json_float(v):
    return None if isinstance(v, float) and math.isnan(v) else v


class Explorer:
    """Runs the archive search for one experiment configuration."""

    def __init__(self, config: ExperimentConfig, data: ExperimentData | None = None):
        config.validate()
        self.config = config
        self.data = data or ExperimentData(config)

    def _root(self) -> CellRecord:
        env = self.data.env
        snap = env.reset()
        return CellRecord(env.key_code(snap), b"", snap, 0.0, 0.0, np.zeros(N_ACC), False)

    def _check_replay(self, rec: CellRecord):
        snap, _ = self.data.env.replay(rec.trajectory)
        if snap != rec.snapshot:
            raise ContractViolation(f"trajectory of cell {rec.key} does not replay to its snapshot")

    def run(self, seed: int) -> RunResult:
        cfg, data = self.config, self.data
        if cfg.kind == "random":
            return self._random(seed)
        env = data.env
        rng = np.random.default_rng(seed)
        verify_rng = np.random.default_rng([seed, 1])
        archive = Archive(env.key_space_size)
        archive.offer(self._root(), cfg.archive_channel)

        channel = cfg.archive_channel
        affect = cfg.affect_reward
        shift = affect == "rac"
        model, target = data.model, data.target
        burst = cfg.burst
        out_states = np.empty((burst, env.state_size))
        out_sums = np.empty((burst, N_ACC))
        out_keys = np.empty(burst, dtype=np.int64)
        best_seen = -math.inf
        progress = []
        every = max(1, cfg.iterations // 100)
        ticks = 0
        t0 = time.perf_counter()
        done = 0
        for it in range(cfg.iterations):
            if not archive.selectable.any():
                log.info("%s: every archived cell is terminal after %d iterations", cfg.name, it)
                break
            if len(archive) == 1:
                # a lone cell is drawn with certainty; skip the weights (and their zero-reward warning)
                rng.random()
                key = archive.keys[0]
            else:
                w = compute_weights(archive, cfg.selection, shift)
                key = archive.keys[sample_index(w.weights, w.total, rng)]
            archive.mark_selected(key)
            rec = archive[key]
            codes = data.sample_actions(rng, burst)
            state0 = np.frombuffer(rec.snapshot, dtype=np.float64)
            n = burst_kernel(state0, rec.sums, codes, env.segs, env.cps, env.opp, env.params,
                             *model.tree[:2], model.y, *model.tree[2:], model.k, model.eps, model.inverse,
                             target.mean, target.ci, out_states, out_sums, out_keys)
            ticks += n
            code_bytes = codes.astype(np.uint8).tobytes()
            for j in range(n):
                state = out_states[j]
                sums = out_sums[j].copy()
                cand = CellRecord(int(out_keys[j]), rec.trajectory + code_bytes[:j + 1], state.tobytes(),
                                  float(state[S_SCORE]), reward_from_sums(sums, affect), sums,
                                  bool(state[S_TERMINAL]))
                if cfg.verify_replay and verify_rng.random() < cfg.verify_replay:
                    self._check_replay(cand)
                archive.offer(cand, channel)
                r = cand.r_b if channel == "r_b" else cand.r_a
                if r > best_seen:
                    best_seen = r
            done = it + 1
            if done % every == 0:
                progress.append([done, best_seen, len(archive)])
        wall = time.perf_counter() - t0

        best = archive.best(channel)
        trace, snap, sums = data.trace(best.trajectory)
        if snap != best.snapshot or not np.array_equal(sums, best.sums):
            raise ContractViolation("best cell failed to replay exactly")
        summary = summarize(best, target, archive, trace=trace)
        log.info("%s seed=%d: best %s=%.4f score=%d archive=%d (%.1fs)",
                 cfg.name, seed, cfg.channel, best.reward(channel), best.r_b, len(archive), wall)
        return RunResult(cfg.name, cfg.kind, seed, cfg.channel, cfg.selection, best, best.reward(channel),
                         summary, trace, archive.fill_ratio(), len(archive), done, ticks, progress, wall, archive)

    def _random(self, seed: int) -> RunResult:
        """Whole episodes of frequency-weighted random actions under a matched tick budget."""
        cfg, data = self.config, self.data
        env = data.env
        rng = np.random.default_rng(seed)
        horizon = env.horizon
        budget = cfg.iterations * cfg.burst
        episodes = max(1, budget // horizon)
        state0 = np.frombuffer(env.reset(), dtype=np.float64)
        best_score, best_codes, ticks = -1.0, None, 0
        t0 = time.perf_counter()
        for _ in range(episodes):
            codes = data.sample_actions(rng, horizon)
            score, n = rollout_kernel(state0, codes, env.segs, env.cps, env.opp, env.params)
            ticks += n
            if score > best_score:
                best_score, best_codes = score, codes[:n]
        wall = time.perf_counter() - t0
        trajectory = best_codes.astype(np.uint8).tobytes()
        trace, snap, sums = data.trace(trajectory)
        best = CellRecord(env.key_code(snap), trajectory, snap, float(best_score),
                          reward_from_sums(sums, cfg.affect_reward), sums, env.is_terminal(snap))
        summary = summarize(best, data.target, None, trace=trace)
        return RunResult(cfg.name, cfg.kind, seed, cfg.channel, cfg.selection, best, best.r_b, summary,
                         trace, None, None, episodes, ticks, [], wall, None)


def run(config: ExperimentConfig, seed: int, data: ExperimentData | None = None) -> RunResult:
    return Explorer(config, data).run(seed)


def random_baseline(config: ExperimentConfig, seed: int, data: ExperimentData | None = None) -> RunResult:
    cfg = ExperimentConfig(**{**config.to_dict(), "kind": "random"})
    return Explorer(cfg, data).run(seed)
