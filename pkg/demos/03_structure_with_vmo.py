"""Find repeated phrases in a melody with a thresholded factor oracle.

Run: python3 demos/03_structure_with_vmo.py
"""

from melodycont.symbolic import quantize
from melodycont.synth import synth_corpus
from melodycont.vmo import build_oracle, find_patterns, melody_frames, threshold_sweep

item = synth_corpus(seed=4, song_count=1, with_forms=True)[0]
frames = melody_frames(quantize(item.song)[0].tokens)

# Pick the threshold with the highest information rate.
theta, rows = threshold_sweep(frames, grid_size=20)
for th, ir in rows[:6]:
    print(f"theta {th:6.2f}  IR {ir:8.1f} bits")
print(f"chosen theta {theta:.2f}")

oracle = build_oracle(frames, theta)
patterns = find_patterns(oracle, min_len=4)
print(f"form {item.form}: {len(patterns)} patterns")
for p in sorted(patterns, key=lambda p: -p.length)[:5]:
    slots = [(s - 1) / 32 for s, _ in p.occurrences]
    print(f"  length {p.length:3d} cells at phrase slots {[round(x, 2) for x in slots]}")
