"""Symbolic melody/chord representation.

Songs are lists of monophonic note events plus chord spans.  The grid form
uses one token per timestep: 0-127 start a pitch, ``HOLD`` (128) sustains
the sounding pitch, ``REST`` (129) is silence.  Chords become 12-d
pitch-class (chroma) vectors aligned 1:1 with the melody grid.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

HOLD = 128
REST = 129
N_TOKENS = 130
DEFAULT_TIMESTEP = 0.125
DEFAULT_BPM = 120.0
SEGMENT_LEN = 32

MAJOR = "major"
MINOR = "minor"


class CorpusError(ValueError):
    """Malformed corpus record."""


class ValidationError(ValueError):
    """A song violates the monophonic/ordering invariants."""


class QuantizationError(ValueError):
    """Two notes land on the same grid cell."""


class TranspositionError(ValueError):
    pass


@dataclass(frozen=True)
class NoteEvent:
    onset_sec: float
    duration_sec: float
    pitch: int

    @property
    def end_sec(self):
        return self.onset_sec + self.duration_sec


@dataclass(frozen=True)
class Chord:
    onset_sec: float
    duration_sec: float
    pitch_classes: frozenset
    root: int
    quality: str = ""

    @property
    def end_sec(self):
        return self.onset_sec + self.duration_sec


@dataclass(frozen=True)
class Key:
    tonic: int
    mode: str = MAJOR


@dataclass(frozen=True)
class SongEvents:
    bpm: float
    key: Key
    notes: tuple = ()
    chords: tuple = ()
    song_id: str = field(default="", compare=False)

    @property
    def end_sec(self):
        ends = [n.end_sec for n in self.notes] + [c.end_sec for c in self.chords]
        return max(ends, default=0.0)

    def validate(self):
        validate_song(self)
        return self


@dataclass(frozen=True)
class MelodyGrid:
    tokens: np.ndarray
    timestep_sec: float = DEFAULT_TIMESTEP

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class Segment:
    melody: np.ndarray  # (n,) int tokens
    chroma: np.ndarray  # (n, 12) {0,1}

    @property
    def n(self):
        return len(self.melody)


# ------------------------------------------------------------ validation


def validate_song(song, where=""):
    if not song.bpm > 0:
        raise ValidationError(f"{where}bpm must be positive")
    if song.key.mode not in (MAJOR, MINOR) or not 0 <= song.key.tonic <= 11:
        raise ValidationError(f"{where}invalid key {song.key}")
    prev_end = None
    for i, n in enumerate(song.notes):
        if not n.duration_sec > 0:
            raise ValidationError(f"{where}note {i}: duration must be positive")
        if n.onset_sec < 0:
            raise ValidationError(f"{where}note {i}: negative onset")
        if not 0 <= n.pitch <= 127:
            raise ValidationError(f"{where}note {i}: pitch {n.pitch} out of range")
        if prev_end is not None and n.onset_sec < prev_end - 1e-9:
            raise ValidationError(f"{where}note {i}: overlaps previous note or is out of order")
        prev_end = n.end_sec
    prev_end = None
    for i, c in enumerate(song.chords):
        if not c.duration_sec > 0 or c.onset_sec < 0:
            raise ValidationError(f"{where}chord {i}: bad timing")
        if not 0 <= c.root <= 11 or any(not 0 <= p <= 11 for p in c.pitch_classes):
            raise ValidationError(f"{where}chord {i}: pitch class out of range")
        if prev_end is not None and c.onset_sec < prev_end - 1e-9:
            raise ValidationError(f"{where}chord {i}: overlaps previous chord or is out of order")
        prev_end = c.end_sec


# --------------------------------------------------------------- corpus IO


def _field(rec, name, idx, kind):
    if not isinstance(rec, dict) or name not in rec:
        raise CorpusError(f"song {idx}: missing field {name!r}")
    val = rec[name]
    if kind == "num" and (isinstance(val, bool) or not isinstance(val, (int, float))):
        raise CorpusError(f"song {idx}: field {name!r} must be a number")
    if kind == "int" and (isinstance(val, bool) or not isinstance(val, int)):
        if isinstance(val, float) and val.is_integer():
            return int(val)
        raise CorpusError(f"song {idx}: field {name!r} must be an integer")
    if kind == "list" and not isinstance(val, list):
        raise CorpusError(f"song {idx}: field {name!r} must be a list")
    return val


def song_from_dict(rec, idx=0):
    bpm = _field(rec, "bpm", idx, "num")
    key = _field(rec, "key", idx, None)
    tonic = _field(key, "tonic", idx, "int")
    mode = _field(key, "mode", idx, None)
    notes = []
    for j, n in enumerate(_field(rec, "notes", idx, "list")):
        where = f"{idx} note {j}"
        notes.append(NoteEvent(float(_field(n, "onset", where, "num")),
                               float(_field(n, "duration", where, "num")),
                               _field(n, "pitch", where, "int")))
    chords = []
    for j, c in enumerate(_field(rec, "chords", idx, "list")):
        where = f"{idx} chord {j}"
        pcs = _field(c, "pitch_classes", where, "list")
        if any(isinstance(p, bool) or not isinstance(p, int) for p in pcs):
            raise CorpusError(f"song {where}: pitch_classes must be integers")
        chords.append(Chord(float(_field(c, "onset", where, "num")),
                            float(_field(c, "duration", where, "num")),
                            frozenset(pcs), _field(c, "root", where, "int"),
                            str(c.get("quality", ""))))
    song = SongEvents(float(bpm), Key(tonic, mode), tuple(notes), tuple(chords),
                      song_id=str(rec.get("id", f"song{idx:04d}")))
    validate_song(song, where=f"song {idx}: ")
    return song


def song_to_dict(song):
    rec = {
        "id": song.song_id,
        "bpm": song.bpm,
        "key": {"tonic": song.key.tonic, "mode": song.key.mode},
        "notes": [{"onset": n.onset_sec, "duration": n.duration_sec, "pitch": n.pitch} for n in song.notes],
        "chords": [{"onset": c.onset_sec, "duration": c.duration_sec, "root": c.root,
                    "pitch_classes": sorted(c.pitch_classes), "quality": c.quality} for c in song.chords],
    }
    if not song.song_id:
        del rec["id"]
    return rec


def parse_corpus(path):
    """Load a JSON corpus file into validated ``SongEvents`` in file order."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"invalid JSON: {exc}") from None
    return parse_corpus_doc(doc)


def parse_corpus_doc(doc):
    if not isinstance(doc, list):
        raise CorpusError("corpus must be a top-level array of songs")
    return [song_from_dict(rec, i) for i, rec in enumerate(doc)]


def dumps_corpus(songs):
    return json.dumps([song_to_dict(s) for s in songs], indent=1, sort_keys=True)


def write_corpus(path, songs):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_corpus(songs))
        fh.write("\n")


# ------------------------------------------------------------ transforms


def normalize_tempo(song, target_bpm=DEFAULT_BPM):
    """Rescale times so the song plays at ``target_bpm`` with the same beats."""
    if song.bpm == target_bpm:
        return song
    k = song.bpm / target_bpm
    notes = tuple(replace(n, onset_sec=n.onset_sec * k, duration_sec=n.duration_sec * k) for n in song.notes)
    chords = tuple(replace(c, onset_sec=c.onset_sec * k, duration_sec=c.duration_sec * k) for c in song.chords)
    return replace(song, bpm=float(target_bpm), notes=notes, chords=chords)


def transpose(song, semitones):
    if semitones == 0:
        return song
    notes = []
    for n in song.notes:
        p = n.pitch + semitones
        if not 0 <= p <= 127:
            raise TranspositionError(f"pitch {n.pitch}{semitones:+d} leaves MIDI range")
        notes.append(replace(n, pitch=p))
    chords = tuple(
        replace(c, root=(c.root + semitones) % 12,
                pitch_classes=frozenset((p + semitones) % 12 for p in c.pitch_classes))
        for c in song.chords
    )
    key = Key((song.key.tonic + semitones) % 12, song.key.mode)
    sid = song.song_id
    return replace(song, key=key, notes=tuple(notes), chords=chords,
                   song_id=f"{sid}+k{semitones % 12}" if sid else sid)


def augment_keys(songs, shifts=range(12)):
    """All songs in every requested transposition (song-major order)."""
    return [transpose(s, k) for s in songs for k in shifts]


# ------------------------------------------------------------- grid form


def _cells(sec, timestep):
    return int(math.floor(sec / timestep + 0.5))


def quantize(song, timestep_sec=DEFAULT_TIMESTEP):
    """Render a song onto the token grid and aligned chroma track.

    Onsets snap to the nearest cell; durations keep at least one cell and
    are cut at the next note's onset.
    """
    if not timestep_sec > 0:
        raise ValueError("timestep_sec must be positive")
    spans = []
    for n in song.notes:
        start = _cells(n.onset_sec, timestep_sec)
        length = max(1, _cells(n.duration_sec, timestep_sec))
        spans.append((start, length, n.pitch))
    length = int(math.ceil(song.end_sec / timestep_sec - 1e-9)) if song.end_sec > 0 else 0
    if spans:
        length = max(length, max(s + l for s, l, _ in spans))
    tokens = np.full(length, REST, dtype=np.int64)
    occupied = set()
    for i, (start, dur, pitch) in enumerate(spans):
        if start in occupied:
            raise QuantizationError(f"note {i} shares onset cell {start} with another note")
        occupied.add(start)
    for i, (start, dur, pitch) in enumerate(spans):
        stop = start + dur
        if i + 1 < len(spans):
            stop = min(stop, spans[i + 1][0])
        tokens[start] = pitch
        tokens[start + 1:stop] = HOLD
    chroma = chroma_track(song.chords, length, timestep_sec)
    return MelodyGrid(tokens, timestep_sec), chroma


def chord_at(chords, t):
    for c in chords:
        if c.onset_sec - 1e-9 <= t < c.end_sec - 1e-9:
            return c
    return None


def chroma_track(chords, length, timestep_sec=DEFAULT_TIMESTEP):
    chroma = np.zeros((length, 12), dtype=np.float32)
    for c in chords:
        lo = max(0, int(math.ceil(c.onset_sec / timestep_sec - 1e-9)))
        hi = min(length, int(math.ceil(c.end_sec / timestep_sec - 1e-9)))
        if hi > lo:
            chroma[lo:hi, sorted(c.pitch_classes)] = 1.0
    return chroma


def grid_to_notes(grid, timestep_sec=None):
    """Inverse of the melody part of ``quantize``."""
    tokens = grid.tokens if isinstance(grid, MelodyGrid) else np.asarray(grid)
    ts = timestep_sec or (grid.timestep_sec if isinstance(grid, MelodyGrid) else DEFAULT_TIMESTEP)
    notes = []
    start = pitch = None
    for i, tok in enumerate(tokens):
        tok = int(tok)
        if tok == HOLD and pitch is not None:
            continue
        if pitch is not None:
            notes.append(NoteEvent(start * ts, (i - start) * ts, pitch))
            pitch = None
        if tok < 128:
            start, pitch = i, tok
    if pitch is not None:
        notes.append(NoteEvent(start * ts, (len(tokens) - start) * ts, pitch))
    return notes


def sanitize_tokens(tokens):
    """Replace HOLD at the grid start or after a REST with REST."""
    out = np.array(tokens, dtype=np.int64)
    prev = REST
    for i, tok in enumerate(out):
        if tok == HOLD and prev == REST:
            out[i] = REST
        prev = out[i]
    return out


def one_hot_melody(token):
    if not 0 <= int(token) < N_TOKENS:
        raise ValueError(f"token {token} out of range")
    v = np.zeros(N_TOKENS, dtype=np.float32)
    v[int(token)] = 1.0
    return v


def one_hot_batch(tokens, dim=N_TOKENS):
    tokens = np.asarray(tokens, dtype=np.int64)
    out = np.zeros(tokens.shape + (dim,), dtype=np.float32)
    np.put_along_axis(out, tokens[..., None], 1.0, axis=-1)
    return out


def rhythm_tokens(tokens):
    """Map melody tokens to 0=ONSET, 1=HOLD, 2=REST."""
    tokens = np.asarray(tokens)
    return np.where(tokens < 128, 0, np.where(tokens == HOLD, 1, 2)).astype(np.int64)


def segment_song(grid, chroma, n=SEGMENT_LEN):
    """Cut a grid into consecutive length-``n`` segments, REST-padding the tail."""
    if n <= 0:
        raise ValueError("segment length must be positive")
    tokens = grid.tokens if isinstance(grid, MelodyGrid) else np.asarray(grid)
    length = len(tokens)
    count = -(-length // n)
    total = count * n
    tok = np.full(total, REST, dtype=np.int64)
    tok[:length] = tokens
    chr_ = np.zeros((total, 12), dtype=np.float32)
    chr_[:length] = chroma[:length]
    return [Segment(tok[i * n:(i + 1) * n].copy(), chr_[i * n:(i + 1) * n].copy()) for i in range(count)]


def song_segments(song, n=SEGMENT_LEN, timestep_sec=DEFAULT_TIMESTEP):
    grid, chroma = quantize(song, timestep_sec)
    return segment_song(grid, chroma, n)
