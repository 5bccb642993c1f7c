"""Cell selection: uniform, reward roulette, and visit-discounted roulette.

Terminal cells get zero weight everywhere since nothing can be explored
from them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

STRATEGIES = ("uniform", "roulette", "ucb")


@dataclass
class SelectionWeights:
    keys: list
    weights: np.ndarray
    total: float

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.total


def _open_mask(archive):
    if len(archive) == 0:
        raise ContractViolation("cannot select from an empty archive")
    mask = archive.selectable
    if not mask.any():
        raise ContractViolation("every cell in the archive is terminal")
    return mask


def weights_uniform(archive) -> SelectionWeights:
    w = _open_mask(archive).astype(np.float64)
    return SelectionWeights(archive.keys, w, float(w.sum()))


def _affect_weights(archive, shift):
    mask = _open_mask(archive)
    r = archive.r_a
    if shift:
        r = (r + 1.0) / 2.0
    if np.any(r[mask] < 0):
        raise ContractViolation("roulette weights need non-negative rewards; enable the shift for R_ac")
    w = np.where(mask, r, 0.0)
    total = float(w.sum())
    if total == 0.0:
        warnings.warn("all selectable cells have zero affect reward; falling back to uniform", stacklevel=3)
        return None
    return w / total


def weights_roulette(archive, shift: bool = False) -> SelectionWeights:
    """Probability proportional to the affect reward ``r_a``.

    ``shift`` maps rewards in [-1, 1] to [0, 1] via (r + 1) / 2 first.
    """
    p = _affect_weights(archive, shift)
    if p is None:
        return weights_uniform(archive)
    return SelectionWeights(archive.keys, p, float(p.sum()))


def weights_ucb(archive, shift: bool = False) -> SelectionWeights:
    """Roulette probabilities divided by sqrt(C_seen + 1), then renormalized."""
    p = _affect_weights(archive, shift)
    if p is None:
        return weights_uniform(archive)
    w = p / np.sqrt(archive.c_seen + 1.0)
    return SelectionWeights(archive.keys, w, float(w.sum()))


def compute_weights(archive, strategy: str, shift: bool = False) -> SelectionWeights:
    if strategy == "uniform":
        return weights_uniform(archive)
    if strategy == "roulette":
        return weights_roulette(archive, shift)
    if strategy == "ucb":
        return weights_ucb(archive, shift)
    raise ValueError(f"unknown selection strategy {strategy!r}; expected one of {STRATEGIES}")


def sample_index(weights: np.ndarray, total: float, rng) -> int:
    cum = np.cumsum(weights)
    i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    i = min(i, len(weights) - 1)
    while weights[i] == 0.0:
        # only reachable when the draw lands exactly on a boundary
        i = (i + 1) % len(weights)
    return i


def sample(weights: SelectionWeights, rng):
    """Draw one key with probability proportional to its weight."""
    return weights.keys[sample_index(weights.weights, weights.total, rng)]
