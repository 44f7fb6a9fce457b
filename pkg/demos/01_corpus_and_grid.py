"""From note events to the 130-token grid and per-cell chord functions.

Run: python3 demos/01_corpus_and_grid.py
"""

import numpy as np

from melodycont.harmony import ChordFunction, function_labels
from melodycont.symbolic import HOLD, REST, grid_to_notes, quantize, segment_song
from melodycont.synth import planted_pairs, synth_corpus

# A seeded synthetic folk corpus; `form` lists which phrase type fills each 8-beat slot.
item = synth_corpus(seed=0, song_count=3, with_forms=True)[0]
song = item.song
print(f"{song.song_id}: key {song.key.tonic} {song.key.mode}, {len(song.notes)} notes, form {item.form}")

# Quantize to 0.125 s cells.  Pitches are 0-127, HOLD continues, REST is silence.
grid, chroma = quantize(song)
show = {HOLD: "-", REST: "."}
print("first two bars:", " ".join(show.get(int(t), str(int(t))) for t in grid.tokens[:32]))
assert grid_to_notes(grid) == list(song.notes)  # the grid is lossless

# Each chord is labelled by its role in the key.
labels = function_labels(song.chords, song.key, len(grid))
names = [ChordFunction(x).name if x < 4 else "_" for x in labels[:32:8]]
print("chord functions per half bar:", names)

# 32-cell segments are the unit the VAE encodes.
segments = segment_song(grid, chroma)
print(f"{len(grid)} cells -> {len(segments)} segments of {len(segments[0].melody)} cells")

# Phrase repetitions planted by the generator.
pairs = planted_pairs(item.form)
print(f"{len(pairs)} repeated phrase pairs, e.g. cells {pairs[0] if pairs else None}")
print("chroma of the first cell:", np.flatnonzero(chroma[0]).tolist())
