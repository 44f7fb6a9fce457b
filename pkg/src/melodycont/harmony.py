"""Chord-function labels (tonic / dominant / subdominant / other).

A chord is labelled from the scale degree of its root in the song key.
Chords whose tones leave the key's scale count as borrowed and get ``O``;
in minor keys the raised leading tone is allowed on dominant chords.
"""

import enum

import numpy as np

from .symbolic import MAJOR, DEFAULT_TIMESTEP, chord_at

MAJOR_STEPS = (0, 2, 4, 5, 7, 9, 11)
MINOR_STEPS = (0, 2, 3, 5, 7, 8, 10)


class ChordFunction(enum.IntEnum):
    T = 0
    D = 1
    S = 2
    O = 3


PAD = 4
N_FUNCTION_DIMS = 5

MAJOR_TABLE = {1: ChordFunction.T, 6: ChordFunction.T,
               4: ChordFunction.S, 2: ChordFunction.S,
               5: ChordFunction.D, 7: ChordFunction.D, 3: ChordFunction.D}
MINOR_TABLE = {1: ChordFunction.T, 3: ChordFunction.T, 6: ChordFunction.T,
               4: ChordFunction.S, 2: ChordFunction.S,
               5: ChordFunction.D, 7: ChordFunction.D}


def scale_steps(mode):
    return MAJOR_STEPS if mode == MAJOR else MINOR_STEPS


def scale_degree(root, key):
    """1-based degree of ``root`` in the key's scale, or ``None``."""
    rel = (root - key.tonic) % 12
    steps = scale_steps(key.mode)
    return steps.index(rel) + 1 if rel in steps else None


def chord_function(root, pitch_classes, key, quality=None):
    degree = scale_degree(root, key)
    if degree is None:
        return ChordFunction.O
    steps = set(scale_steps(key.mode))
    allowed = set(steps)
    if key.mode != MAJOR and degree in (5, 7):
        allowed.add(11)  # raised leading tone
    if any((pc - key.tonic) % 12 not in allowed for pc in pitch_classes):
        return ChordFunction.O
    table = MAJOR_TABLE if key.mode == MAJOR else MINOR_TABLE
    return table.get(degree, ChordFunction.O)


def chord_function_of(chord, key):
    return chord_function(chord.root, chord.pitch_classes, key, chord.quality)


def function_labels(chords, key, grid_len, timestep_sec=DEFAULT_TIMESTEP):
    """Per-cell label index (0-3 for T/D/S/O, 4 for no chord)."""
    labels = np.full(grid_len, PAD, dtype=np.int64)
    cache = {}
    for i in range(grid_len):
        c = chord_at(chords, i * timestep_sec)
        if c is None:
            continue
        if id(c) not in cache:
            cache[id(c)] = int(chord_function_of(c, key))
        labels[i] = cache[id(c)]
    return labels


def function_track(chords, key, grid_len, timestep_sec=DEFAULT_TIMESTEP):
    """5-d one-hot per cell: T, D, S, O, PAD."""
    labels = function_labels(chords, key, grid_len, timestep_sec)
    out = np.zeros((grid_len, N_FUNCTION_DIMS), dtype=np.float32)
    out[np.arange(grid_len), labels] = 1.0
    return out
