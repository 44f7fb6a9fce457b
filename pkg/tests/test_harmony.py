import numpy as np
import pytest
from hypothesis import given, strategies as st

from melodycont.harmony import PAD, ChordFunction as F, chord_function, function_track, scale_degree
from melodycont.symbolic import Chord, Key

C = Key(0, "major")
Cm = Key(0, "minor")

# (root, pitch classes) for every diatonic triad of C major plus its 7th and 9th
C_MAJOR_CHORDS = {
    "C": (0, {0, 4, 7}), "Cmaj7": (0, {0, 4, 7, 11}), "Cmaj9": (0, {0, 4, 7, 11, 2}),
    "Am": (9, {9, 0, 4}), "Am7": (9, {9, 0, 4, 7}), "Am9": (9, {9, 0, 4, 7, 11}),
    "F": (5, {5, 9, 0}), "Fmaj7": (5, {5, 9, 0, 4}), "Fmaj9": (5, {5, 9, 0, 4, 7}),
    "Dm": (2, {2, 5, 9}), "Dm7": (2, {2, 5, 9, 0}), "Dm9": (2, {2, 5, 9, 0, 4}),
    "G": (7, {7, 11, 2}), "G7": (7, {7, 11, 2, 5}), "G9": (7, {7, 11, 2, 5, 9}),
    "Bdim": (11, {11, 2, 5}), "Bm7b5": (11, {11, 2, 5, 9}),
    "Em": (4, {4, 7, 11}), "Em7": (4, {4, 7, 11, 2}), "Em9": (4, {4, 7, 11, 2, 5}),
}
EXPECTED = {"C": F.T, "Am": F.T, "F": F.S, "Dm": F.S, "G": F.D, "Bdim": F.D, "Bm7b5": F.D, "Em": F.D}


def expected_label(name):
    for base in sorted(EXPECTED, key=len, reverse=True):
        if name.startswith(base):
            return EXPECTED[base]
    raise KeyError(name)


def test_scale_degree():
    assert scale_degree(7, C) == 5
    assert scale_degree(6, C) is None
    assert scale_degree(3, Cm) == 3


@pytest.mark.parametrize("name", sorted(C_MAJOR_CHORDS))
def test_major_key_degrees_and_extensions(name):
    root, pcs = C_MAJOR_CHORDS[name]
    assert chord_function(root, pcs, C) is expected_label(name)


@pytest.mark.parametrize("root,pcs", [(10, {10, 2, 5}), (6, {6, 10, 1}), (0, {0, 3, 7}), (2, {2, 6, 9}),
                                      (8, {8, 0, 3})])
def test_non_diatonic_and_borrowed_chords_are_other(root, pcs):
    assert chord_function(root, pcs, C) is F.O


def test_minor_key_table():
    assert chord_function(0, {0, 3, 7}, Cm) is F.T       # i
    assert chord_function(3, {3, 7, 10}, Cm) is F.T      # III
    assert chord_function(8, {8, 0, 3}, Cm) is F.T       # VI
    assert chord_function(5, {5, 8, 0}, Cm) is F.S       # iv
    assert chord_function(2, {2, 5, 8}, Cm) is F.S       # ii dim
    assert chord_function(7, {7, 10, 2}, Cm) is F.D      # v
    assert chord_function(7, {7, 11, 2}, Cm) is F.D      # V with leading tone
    assert chord_function(7, {7, 11, 2, 5}, Cm) is F.D   # V7
    assert chord_function(10, {10, 2, 5}, Cm) is F.D     # VII
    assert chord_function(0, {0, 4, 7}, Cm) is F.O       # borrowed major tonic


@given(st.integers(0, 11), st.sampled_from(sorted(C_MAJOR_CHORDS)), st.sampled_from(["major", "minor"]))
def test_transposition_equivariance(k, name, mode):
    root, pcs = C_MAJOR_CHORDS[name]
    key = Key(0, mode)
    shifted = chord_function((root + k) % 12, {(p + k) % 12 for p in pcs}, Key(k, mode))
    assert shifted is chord_function(root, pcs, key)


def test_equivariance_over_all_keys_exhaustive():
    for k in range(12):
        for name, (root, pcs) in C_MAJOR_CHORDS.items():
            got = chord_function((root + k) % 12, {(p + k) % 12 for p in pcs}, Key(k, "major"))
            assert got is expected_label(name)


def test_function_track():
    c = Chord(0.0, 0.5, frozenset({0, 4, 7}), 0)
    track = function_track([c], C, 4)
    np.testing.assert_array_equal(track, np.tile(np.eye(5)[F.T], (4, 1)))
    empty = function_track([], C, 3)
    assert (empty.argmax(1) == PAD).all()
    cg = [Chord(0.0, 0.25, frozenset({0, 4, 7}), 0), Chord(0.25, 0.25, frozenset({7, 11, 2}), 7)]
    assert function_track(cg, C, 4).argmax(1).tolist() == [F.T, F.T, F.D, F.D]
    assert (function_track(cg, C, 6).sum(1) == 1).all()
