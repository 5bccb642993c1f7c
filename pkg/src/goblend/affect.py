"""Arousal surrogate and affect rewards.

The surrogate is a distance-weighted k-nearest-neighbour lookup over the
demonstration windows. Rewards compare a predicted arousal trace ``h_a`` with
the expert target ``t_a``; each reward is the running mean of a per-window
term, so the archive keeps only the six sums in ``ACC_*`` order and derives
any reward from them in O(1).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ContractViolation

EPSILON = 1e-6
WEIGHTINGS = ("inverse", "linear")

# accumulator layout
ACC_N, ACC_SIM, ACC_SIMU, ACC_RAC, ACC_H, ACC_SIGMA = range(6)
N_ACC = 6

AFFECT_REWARDS = ("ra", "rau", "rac", "max-arousal")


@njit(cache=True)
def _insert(i, d2, k, filled, nb_idx, nb_d2):
    """Keep the k smallest (distance, index) pairs sorted; returns the new fill count."""
    if filled < k:
        pos = filled
        filled += 1
    elif d2 < nb_d2[k - 1] or (d2 == nb_d2[k - 1] and i < nb_idx[k - 1]):
        pos = k - 1
    else:
        return filled
    while pos > 0 and (nb_d2[pos - 1] > d2 or (nb_d2[pos - 1] == d2 and nb_idx[pos - 1] > i)):
        nb_d2[pos] = nb_d2[pos - 1]
        nb_idx[pos] = nb_idx[pos - 1]
        pos -= 1
    nb_d2[pos] = d2
    nb_idx[pos] = i
    return filled


@njit(cache=True)
def _combine(y, k, eps, inverse, nb_idx, nb_d2):
    num = 0.0
    den = 0.0
    mean = 0.0
    for m in range(k):
        a = y[nb_idx[m]]
        d = math.sqrt(nb_d2[m])
        w = 1.0 / (d + eps) if inverse else d
        num += w * a
        den += w
        mean += a
    mean = mean / k
    h = num / den if den > 0.0 else mean
    var = 0.0
    for m in range(k):
        diff = y[nb_idx[m]] - mean
        var += diff * diff
    return h, math.sqrt(var / k)


@njit(cache=True)
def scan_kernel(X, y, q, k, eps, inverse, nb_idx, nb_d2):
    """Exact k-NN by a plain linear scan. Returns ``(h_a, sigma)``."""
    filled = 0
    for i in range(X.shape[0]):
        d2 = 0.0
        for j in range(X.shape[1]):
            diff = X[i, j] - q[j]
            d2 += diff * diff
        filled = _insert(i, d2, k, filled, nb_idx, nb_d2)
    return _combine(y, k, eps, inverse, nb_idx, nb_d2)


@njit(cache=True)
def _box_d2(lo, hi, q):
    d2 = 0.0
    for j in range(q.shape[0]):
        if q[j] < lo[j]:
            diff = lo[j] - q[j]
            d2 += diff * diff
        elif q[j] > hi[j]:
            diff = q[j] - hi[j]
            d2 += diff * diff
    return d2


@njit(cache=True)
def knn_kernel(Xp, perm, y, lo, hi, nodes, q, k, eps, inverse, nb_idx, nb_d2):
    """Exact k-NN over a KD-tree with bounding-box pruning.

    Row distances are summed in feature order exactly as in ``scan_kernel``
    and neighbours are ranked by (distance, original index), so both kernels
    return identical neighbour sets. A row's partial sum only grows, so the
    sum is abandoned once it passes the current k-th distance. Returns
    ``(h_a, sigma)``.
    """
    filled = 0
    worst = np.inf
    stack = np.empty(256, dtype=np.int64)
    stack[0] = 0
    sp = 1
    f = Xp.shape[1]
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_d2(lo[node], hi[node], q) > worst:
            continue
        left = nodes[node, 2]
        if left < 0:
            for r in range(nodes[node, 0], nodes[node, 1]):
                d2 = 0.0
                for j in range(f):
                    diff = Xp[r, j] - q[j]
                    d2 += diff * diff
                    if d2 > worst:
                        break
                if d2 <= worst:
                    filled = _insert(perm[r], d2, k, filled, nb_idx, nb_d2)
                    if filled == k:
                        worst = nb_d2[k - 1]
            continue
        right = nodes[node, 3]
        if _box_d2(lo[left], hi[left], q) <= _box_d2(lo[right], hi[right], q):
            stack[sp] = right
            stack[sp + 1] = left
        else:
            stack[sp] = left
            stack[sp + 1] = right
        sp += 2
    return _combine(y, k, eps, inverse, nb_idx, nb_d2)


def build_tree(X, leaf_size: int = 32):
    """KD-tree over the rows of ``X``, split at the median of the highest-variance column.

    Returns ``(Xp, perm, lo, hi, nodes)``: rows in leaf order, their original
    indices, per-node bounding boxes, and node rows ``(start, end, left, right)``
    with ``left = right = -1`` at leaves.
    """
    n = X.shape[0]
    perm = np.arange(n, dtype=np.int64)
    nodes, lo, hi = [], [], []

    def split(start, end):
        idx = len(nodes)
        nodes.append([start, end, -1, -1])
        pts = X[perm[start:end]]
        lo.append(pts.min(axis=0))
        hi.append(pts.max(axis=0))
        if end - start > leaf_size:
            dim = int(np.argmax(pts.var(axis=0)))
            order = np.argsort(pts[:, dim], kind="stable")
            perm[start:end] = perm[start:end][order]
            mid = (start + end) // 2
            nodes[idx][2] = split(start, mid)
            nodes[idx][3] = split(mid, end)
        return idx

    split(0, n)
    return (np.ascontiguousarray(X[perm]), perm, np.array(lo), np.array(hi),
            np.array(nodes, dtype=np.int64))


@njit(cache=True)
def accumulate(acc, h, sigma, t, c):
    """Fold one window into the reward sums."""
    sim = (1.0 - abs(h - t)) ** 2
    acc[ACC_N] += 1.0
    acc[ACC_SIM] += sim
    acc[ACC_SIMU] += sim / (1.0 + sigma)
    acc[ACC_RAC] += 1.0 if abs(h - t) < c else -1.0
    acc[ACC_H] += h
    acc[ACC_SIGMA] += sigma


def reward_from_sums(acc, name: str) -> float:
    """Reward ``name`` from accumulated sums; an empty trajectory scores 0."""
    n = acc[ACC_N]
    if n == 0:
        return 0.0
    if name == "ra":
        return acc[ACC_SIM] / n
    if name == "rau":
        return acc[ACC_SIMU] / n
    if name == "rac":
        return acc[ACC_RAC] / n
    if name == "max-arousal":
        return acc[ACC_H] / n
    raise ValueError(f"unknown affect reward {name!r}")


@dataclass(frozen=True)
class ArousalEstimate:
    h_a: float
    sigma: float


class ArousalModel:
    """Distance-weighted k-NN arousal surrogate over demonstration windows.

    Rows of ``features`` must already be in (session id, window) order; ties
    at the k-th distance then resolve to the earliest row.
    """

    def __init__(self, features, arousal, k: int = 5, eps: float = EPSILON, weighting: str = "inverse"):
        X = np.ascontiguousarray(features, dtype=np.float64)
        y = np.ascontiguousarray(arousal, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ContractViolation("k-NN dataset must be a non-empty 2-D array")
        if y.shape != (X.shape[0],):
            raise ContractViolation("arousal must have one value per dataset row")
        if k < 1:
            raise ContractViolation("k must be >= 1")
        if weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
        if k > X.shape[0]:
            warnings.warn(f"k={k} exceeds dataset size {X.shape[0]}; using all entries", stacklevel=2)
            k = X.shape[0]
        self.X, self.y, self.k, self.eps, self.weighting = X, y, k, eps, weighting
        self._idx = np.empty(k, dtype=np.int64)
        self._d2 = np.empty(k)
        self.tree = build_tree(X)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def inverse(self) -> bool:
        return self.weighting == "inverse"

    @classmethod
    def from_sessions(cls, sessions, **kwargs) -> "ArousalModel":
        ordered = sorted(sessions, key=lambda s: s.session_id)
        X = np.concatenate([s.features for s in ordered])
        y = np.concatenate([s.arousal for s in ordered])
        return cls(X, y, **kwargs)

    def _query(self, features):
        q = np.ascontiguousarray(features, dtype=np.float64)
        if q.shape != (self.n_features,):
            raise ContractViolation(f"feature vector must have length {self.n_features}")
        Xp, perm, lo, hi, nodes = self.tree
        return knn_kernel(Xp, perm, self.y, lo, hi, nodes, q, self.k, self.eps, self.inverse, self._idx, self._d2)

    def scan(self, features) -> ArousalEstimate:
        """Same estimate by linear scan, bypassing the tree."""
        q = np.ascontiguousarray(features, dtype=np.float64)
        if q.shape != (self.n_features,):
            raise ContractViolation(f"feature vector must have length {self.n_features}")
        h, sigma = scan_kernel(self.X, self.y, q, self.k, self.eps, self.inverse, self._idx, self._d2)
        return ArousalEstimate(float(h), float(sigma))

    def estimate(self, features) -> ArousalEstimate:
        h, sigma = self._query(features)
        return ArousalEstimate(float(h), float(sigma))

    def neighbors(self, features):
        """Indices and Euclidean distances of the k nearest rows."""
        self._query(features)
        return self._idx.copy(), np.sqrt(self._d2)

    def predict(self, feature_rows):
        rows = np.asarray(feature_rows, dtype=np.float64)
        out = np.empty((rows.shape[0], 2))
        for i, q in enumerate(rows):
            out[i] = self._query(q)
        return out


def knn_estimate(features, dataset, k: int = 5, eps: float = EPSILON, weighting: str = "inverse") -> ArousalEstimate:
    """One-shot estimate; ``dataset`` is an ``ArousalModel`` or a ``(X, y)`` pair."""
    if isinstance(dataset, ArousalModel):
        model = dataset
        if (k, eps, weighting) != (model.k, model.eps, model.weighting):
            model = ArousalModel(model.X, model.y, k=k, eps=eps, weighting=weighting)
    else:
        X, y = dataset
        model = ArousalModel(X, y, k=k, eps=eps, weighting=weighting)
    return model.estimate(features)


def similarity(h: float, t: float) -> float:
    if not (0.0 <= h <= 1.0 and 0.0 <= t <= 1.0):
        raise ContractViolation(f"similarity inputs must lie in [0, 1], got h={h}, t={t}")
    return (1.0 - abs(h - t)) ** 2


@dataclass
class ArousalTrajectory:
    """Per-window predictions with incrementally maintained reward sums."""

    h_a: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    sums: np.ndarray = field(default_factory=lambda: np.zeros(N_ACC))

    def __len__(self):
        return len(self.h_a)

    def append(self, estimate: ArousalEstimate, target) -> None:
        i = len(self.h_a)
        self.h_a.append(estimate.h_a)
        self.sigma.append(estimate.sigma)
        accumulate(self.sums, estimate.h_a, estimate.sigma, float(target.mean[i]), float(target.ci[i]))

    def reward(self, name: str) -> float:
        return reward_from_sums(self.sums, name)


def _check(traj):
    if len(traj.h_a) == 0:
        raise ContractViolation("reward of an empty trajectory")


def reward_ra(traj, target) -> float:
    _check(traj)
    total = 0.0
    for i, h in enumerate(traj.h_a):
        total += similarity(h, target.mean[i])
    return total / len(traj.h_a)


def reward_rau(traj, target) -> float:
    _check(traj)
    total = 0.0
    for i, (h, s) in enumerate(zip(traj.h_a, traj.sigma)):
        total += similarity(h, target.mean[i]) / (1.0 + s)
    return total / len(traj.h_a)


def reward_rac(traj, target) -> float:
    _check(traj)
    total = 0.0
    for i, h in enumerate(traj.h_a):
        total += 1.0 if abs(h - target.mean[i]) < target.ci[i] else -1.0
    return total / len(traj.h_a)


def reward_max_arousal(traj) -> float:
    _check(traj)
    total = 0.0
    for h in traj.h_a:
        total += h
    return total / len(traj.h_a)
