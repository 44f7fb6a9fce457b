"""Rhythm accuracy of a generation against a reference, and token accuracy.

Rhythm accuracy scores each reference note (from the second on) that has a
generated onset within ``epsilon_sec``.  A hit is weighted by how much of
the generated time between the previous and the current matched note is
*not* taken up by extra notes in between.
"""

import enum
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


class Normalization(enum.Enum):
    PAPER_LITERAL = "paper_literal"  # divide by n
    HIT_COUNT = "hit_count"          # divide by n - 1


@dataclass(frozen=True)
class RhythmAccuracyConfig:
    epsilon_sec: float = 0.1
    normalization: Normalization = Normalization.PAPER_LITERAL

    def __post_init__(self):
        if not self.epsilon_sec > 0:
            raise ValueError("epsilon_sec must be positive")


def _onsets_durations(notes):
    on = np.array([n.onset_sec for n in notes], dtype=np.float64)
    du = np.array([n.duration_sec for n in notes], dtype=np.float64)
    return on, du


def nearest_index(x, gen):
    """Index of the generated note whose onset is closest to ``x``; ties go low."""
    if len(gen) == 0:
        raise MetricError("generation is empty")
    onsets = np.asarray([g.onset_sec for g in gen] if not isinstance(gen, np.ndarray) else gen, dtype=np.float64)
    return int(np.argmin(np.abs(onsets - x)))


def rhythm_accuracy(reference, generation, config=RhythmAccuracyConfig()):
    n = len(reference)
    if n < 2:
        raise MetricError("reference needs at least two notes")
    if len(generation) == 0:
        raise MetricError("generation is empty")
    r, _ = _onsets_durations(reference)
    g, d = _onsets_durations(generation)
    # argmin keeps the first minimum, so ties resolve to the smaller index
    h = np.argmin(np.abs(r[:, None] - g[None, :]), axis=1)
    csum = np.concatenate([[0.0], np.cumsum(d)])
    total = 0.0
    eps = config.epsilon_sec
    for i in range(1, n):
        diff = r[i] - g[h[i]]
        if not -eps < diff < eps:
            continue
        a, b = h[i - 1], h[i]
        if a == b:
            total += 1.0
            continue
        lo, hi = min(a, b), max(a, b)
        inner = csum[hi] - csum[lo + 1]
        span = csum[hi + 1] - csum[lo]
        total += 1.0 - inner / span
    denom = n if config.normalization is Normalization.PAPER_LITERAL else n - 1
    return total / denom


def token_accuracy(pred, target):
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise MetricError(f"length mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        return 1.0
    return float((pred == target).mean())


def rhythm_token_accuracy(pred_rhythm, target_rhythm):
    return token_accuracy(pred_rhythm, target_rhythm)
