from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from melodycont.metrics import (MetricError, Normalization, RhythmAccuracyConfig, nearest_index,
                                rhythm_accuracy, token_accuracy)
from melodycont.symbolic import NoteEvent

HIT = RhythmAccuracyConfig(normalization=Normalization.HIT_COUNT)


def notes(pairs):
    return [NoteEvent(float(o), float(d), 60) for o, d in pairs]


def exact_rhythm_oracle(ref, gen, eps=Fraction(1, 10), literal=True):
    """Direct exact-arithmetic transcription of the duration-ratio rhythm score."""
    r = [Fraction(n.onset_sec) for n in ref]
    g = [Fraction(n.onset_sec) for n in gen]
    d = [Fraction(n.duration_sec) for n in gen]

    def h(x):
        best = 0
        for j in range(len(g)):
            if abs(g[j] - x) < abs(g[best] - x):
                best = j
        return best

    total = Fraction(0)
    for i in range(1, len(r)):
        if not (-eps < r[i] - g[h(r[i])] < eps):
            continue
        a, b = h(r[i - 1]), h(r[i])
        if a == b:
            total += 1
            continue
        num = sum((d[j] for j in range(a + 1, b)), Fraction(0))
        den = sum((d[j] for j in range(a, b + 1)), Fraction(0))
        total += 1 - num / den
    return total / (len(r) if literal else len(r) - 1)


def random_instance(gen):
    def seq(k):
        cells = np.sort(gen.choice(64, size=k, replace=False))
        out = []
        for i, c in enumerate(cells):
            nxt = cells[i + 1] if i + 1 < k else c + gen.integers(1, 8)
            out.append((c / 16, int(gen.integers(1, nxt - c + 1)) / 16))
        return notes(out)

    return seq(int(gen.integers(2, 12))), seq(int(gen.integers(1, 12)))


def test_matches_exact_oracle_on_1000_instances():
    gen = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        ref, g = random_instance(gen)
        for cfg, literal in ((RhythmAccuracyConfig(), True), (HIT, False)):
            worst = max(worst, abs(rhythm_accuracy(ref, g, cfg) - float(exact_rhythm_oracle(ref, g, literal=literal))))
    assert worst < 1e-9


def test_identity_scores_n_minus_one_over_n():
    ref = notes([(0, 0.5), (0.5, 0.25), (0.75, 0.25), (1.0, 1.0)])
    assert rhythm_accuracy(ref, ref) == 0.75
    assert rhythm_accuracy(ref, ref, HIT) == 1.0


def test_worked_example_with_extra_note():
    ref = notes([(0, 0.5), (0.5, 0.5), (1.0, 0.5)])
    gen = notes([(0, 0.5), (0.5, 0.25), (0.75, 0.25), (1.0, 0.5)])
    assert rhythm_accuracy(ref, gen) == pytest.approx((1 + 0.75) / 3, abs=1e-15)


def test_shift_beyond_tolerance_scores_zero():
    ref = notes([(0, 0.5), (0.5, 0.5), (1.0, 0.5)])
    gen = notes([(0.2, 0.5), (0.7, 0.5), (1.2, 0.5)])
    assert rhythm_accuracy(ref, gen) == 0.0


def test_errors():
    with pytest.raises(MetricError):
        rhythm_accuracy(notes([(0, 1)]), notes([(0, 1)]))
    with pytest.raises(MetricError):
        rhythm_accuracy(notes([(0, 1), (1, 1)]), [])
    with pytest.raises(ValueError):
        RhythmAccuracyConfig(epsilon_sec=0)


def test_nearest_index():
    g = notes([(0, 0.5), (0.5, 0.5), (1.0, 0.5)])
    assert nearest_index(0.5, g) == 1
    assert nearest_index(0.25, notes([(0, 0.5), (0.5, 0.5)])) == 0
    assert nearest_index(9.0, g) == 2
    with pytest.raises(MetricError):
        nearest_index(0.0, [])


def test_token_accuracy():
    assert token_accuracy([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
    assert token_accuracy([1, 2], [3, 4]) == 0.0
    assert token_accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75
    with pytest.raises(MetricError):
        token_accuracy([1], [1, 2])


instance = st.integers(0, 2 ** 32 - 1).map(lambda s: random_instance(np.random.default_rng(s)))


@settings(max_examples=200, deadline=None)
@given(instance)
def test_bounded(inst):
    ref, gen = inst
    for cfg in (RhythmAccuracyConfig(), HIT):
        assert 0.0 <= rhythm_accuracy(ref, gen, cfg) <= 1.0


@settings(max_examples=200, deadline=None)
@given(instance, st.integers(1, 64))
def test_time_shift_invariance(inst, k):
    ref, gen = inst
    dt = k / 16
    shift = lambda ns: [NoteEvent(n.onset_sec + dt, n.duration_sec, n.pitch) for n in ns]
    assert rhythm_accuracy(shift(ref), shift(gen)) == pytest.approx(rhythm_accuracy(ref, gen), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(2, 8), min_size=2, max_size=8), st.data())
def test_extra_note_between_hits_never_helps(gaps, data):
    cells = np.concatenate([[0], np.cumsum(gaps)])
    ref = notes([(c / 8, g / 8) for c, g in zip(cells, list(gaps) + [2])])
    i = data.draw(st.integers(0, len(gaps) - 1))
    split = data.draw(st.integers(1, gaps[i] - 1))
    gen = list(ref)
    a = ref[i]
    gen[i] = NoteEvent(a.onset_sec, split / 8, a.pitch)
    gen.insert(i + 1, NoteEvent(a.onset_sec + split / 8, (gaps[i] - split) / 8, a.pitch))
    assert rhythm_accuracy(ref, gen) <= rhythm_accuracy(ref, ref) + 1e-12
