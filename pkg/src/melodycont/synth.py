"""Deterministic folk-like corpus generator.

Stands in for a real lead-sheet corpus in tests and demos.  Each song is a
sequence of 8-beat phrases (4.0 s at 120 bpm) drawn from a small per-song
pool of phrase types.  A phrase type fixes melody, rhythm and a 4-chord
progression, so every reuse of a type is an exact planted repetition.
Types are tied to a harmonic role (tonic-, subdominant- or
dominant-centred progression), which makes the chord-function condition
informative about which phrase comes next.
"""

from dataclasses import dataclass

from .kernel import Rng
from .symbolic import MAJOR, MINOR, Chord, Key, NoteEvent, SongEvents, DEFAULT_BPM

MAJOR_STEPS = (0, 2, 4, 5, 7, 9, 11)
MINOR_STEPS = (0, 2, 3, 5, 7, 8, 10)

# root scale degrees (1-based), one chord per 2 beats
PROGRESSIONS = {
    "T": ((1, 6, 1, 5), (6, 1, 2, 1), (1, 1, 5, 1), (1, 4, 6, 1)),
    "S": ((4, 2, 4, 1), (2, 4, 4, 5), (4, 4, 2, 5), (2, 2, 4, 1)),
    "D": ((5, 3, 5, 1), (5, 7, 5, 5), (3, 5, 5, 6), (7, 5, 5, 1)),
}
ROLE_CYCLE = ("T", "S", "D", "T", "S", "D")

# one-bar (16 cell) rhythm idioms in cells; every value is 1, 2, 4 or 8 cells
BAR_RHYTHMS = (
    (4, 4, 4, 4), (4, 2, 2, 4, 4), (2, 2, 4, 2, 2, 4), (4, 4, 2, 2, 4), (2, 1, 1, 4, 4, 4), (8, 4, 4),
)
CADENCE_BARS = ((4, 4, 8), (2, 2, 4, 8), (8, 8))


@dataclass(frozen=True)
class SynthParams:
    minor_prob: float = 0.25
    phrase_pool: int = 4
    min_phrases: int = 10
    max_phrases: int = 13
    repeat_prob: float = 0.6
    rest_prob: float = 0.03
    timestep_sec: float = 0.125
    cells_per_phrase: int = 32


@dataclass(frozen=True)
class SynthSong:
    song: SongEvents
    form: tuple  # phrase-type index per phrase slot


def _scale(mode):
    return MAJOR_STEPS if mode == MAJOR else MINOR_STEPS


def _triad(degree, tonic, mode, raised_dominant):
    steps = _scale(mode)
    idx = degree - 1
    pcs = [(tonic + steps[(idx + k) % 7]) % 12 for k in (0, 2, 4)]
    if raised_dominant and mode == MINOR and degree == 5:
        pcs[1] = (pcs[1] + 1) % 12  # leading tone
    third = (pcs[1] - pcs[0]) % 12
    fifth = (pcs[2] - pcs[0]) % 12
    quality = {(4, 7): "maj", (3, 7): "min", (3, 6): "dim", (4, 8): "aug"}[(third, fifth)]
    return pcs[0], frozenset(pcs), quality


def _phrase_type(rng, role, key, params):
    prog = rng.choice(PROGRESSIONS[role])
    raised = key.mode == MINOR and rng.uniform() < 0.7
    chords = [_triad(d, key.tonic, key.mode, raised) for d in prog]

    rhythm = []
    rhythm.extend(rng.choice(BAR_RHYTHMS))
    rhythm.extend(rng.choice(CADENCE_BARS))
    is_rest = [i > 0 and rng.uniform() < params.rest_prob for i in range(len(rhythm))]

    steps = _scale(key.mode)
    base = 60 + key.tonic if key.tonic <= 6 else 48 + key.tonic
    deg = int(rng.integers(0, 5))
    pitches = []
    cell = 0
    for dur in rhythm:
        chord_idx = min(cell // 8, 3)
        if cell % 8 == 0:
            # chord tone on each chord change
            root_deg = prog[chord_idx] - 1
            options = [root_deg + o for o in (0, 2, 4, 7, -3, -5)]
            options = [o for o in options if -3 <= o <= 10]
            deg = min(options, key=lambda o: (abs(o - deg), o))
        else:
            deg = min(10, max(-3, deg + int(rng.integers(-2, 3))))
        octave, pos = divmod(deg, 7)
        pitches.append(base + 12 * octave + steps[pos])
        cell += dur
    return dict(chords=chords, rhythm=rhythm, rests=is_rest, pitches=pitches)


def synth_song(rng, params=SynthParams(), song_id=""):
    mode = MINOR if rng.uniform() < params.minor_prob else MAJOR
    key = Key(int(rng.integers(0, 12)), mode)
    n_phrases = int(rng.integers(params.min_phrases, params.max_phrases + 1))
    types = [_phrase_type(rng, ROLE_CYCLE[i % len(ROLE_CYCLE)], key, params)
             for i in range(params.phrase_pool)]
    form = [0]
    for _ in range(n_phrases - 1):
        used = sorted(set(form))
        if len(used) < len(types) and rng.uniform() >= params.repeat_prob:
            form.append(len(used))
        else:
            form.append(int(rng.choice(used)))

    ts = params.timestep_sec
    notes, chords = [], []
    for slot, t in enumerate(form):
        ph = types[t]
        origin = slot * params.cells_per_phrase
        cell = origin
        for dur, rest, pitch in zip(ph["rhythm"], ph["rests"], ph["pitches"]):
            if not rest:
                notes.append(NoteEvent(cell * ts, dur * ts, int(pitch)))
            cell += dur
        span = params.cells_per_phrase // 4
        for k, (root, pcs, quality) in enumerate(ph["chords"]):
            chords.append(Chord((origin + k * span) * ts, span * ts, pcs, root, quality))
    song = SongEvents(DEFAULT_BPM, key, tuple(notes), tuple(chords), song_id=song_id)
    song.validate()
    return SynthSong(song, tuple(form))


def synth_corpus(seed, song_count, params=SynthParams(), with_forms=False):
    """``song_count`` generated songs; identical output for a fixed seed."""
    if song_count <= 0:
        raise ValueError("song_count must be positive")
    root = Rng(seed, "synth")
    out = [synth_song(root.child(i), params, song_id=f"song{i:04d}") for i in range(song_count)]
    return out if with_forms else [s.song for s in out]


def planted_pairs(form, cells_per_phrase=32):
    """Pairs of cell intervals ``((a0, a1), (b0, b1))`` holding identical phrases."""
    pairs = []
    for i in range(len(form)):
        for j in range(i + 1, len(form)):
            if form[i] == form[j]:
                pairs.append(((i * cells_per_phrase, (i + 1) * cells_per_phrase),
                              (j * cells_per_phrase, (j + 1) * cells_per_phrase)))
    return pairs
