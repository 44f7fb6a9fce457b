"""Thresholded factor oracle (Variable Markov Oracle) over melody frames.

States are numbered 0..N with state 0 the empty prefix; frame ``t`` (1-based)
creates state ``t``.  Two frames are treated as the same symbol when their
distance is below the threshold ``theta``.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .symbolic import REST

REST_FRAME = -1.0


def melody_frames(tokens):
    """Per-cell sounding pitch; HOLD repeats the held pitch, REST is -1."""
    frames = []
    current = REST_FRAME
    for tok in np.asarray(tokens):
        tok = int(tok)
        if tok < 128:
            current = float(tok)
        elif tok == REST:
            current = REST_FRAME
        frames.append(current)
    return np.array(frames, dtype=np.float64)


def pitch_distance(a, b):
    """|a - b| between pitches; a rest is infinitely far from any pitch."""
    ra, rb = a == REST_FRAME, b == REST_FRAME
    if ra or rb:
        return 0.0 if ra and rb else math.inf
    return abs(a - b)


def pairwise_distances(frames):
    f = np.asarray(frames, dtype=np.float64)
    d = np.abs(f[:, None] - f[None, :])
    rest = f == REST_FRAME
    d[rest[:, None] ^ rest[None, :]] = np.inf
    return d


@dataclass
class Oracle:
    frames: np.ndarray
    theta: float
    sfx: list
    lrs: list
    trn: list = field(repr=False)
    new_symbol: list = field(repr=False)
    dist: object = field(default=pitch_distance, repr=False, compare=False)

    @property
    def n_states(self):
        return len(self.sfx)

    @property
    def N(self):
        return len(self.frames)

    @property
    def n_symbols(self):
        return int(sum(self.new_symbol))


def build_oracle(series, theta, dist=pitch_distance):
    """Online construction; ``lrs`` comes from a direct backward scan."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    frames = np.asarray(series, dtype=np.float64)
    N = len(frames)
    # frame of state s is frames[s - 1]
    sfx = [-1] + [0] * N
    lrs = [0] * (N + 1)
    trn = [[] for _ in range(N + 1)]
    new_symbol = [False] * (N + 1)
    for t in range(1, N + 1):
        x = frames[t - 1]
        trn[t - 1].append(t)
        k = sfx[t - 1]
        match = None
        while k != -1:
            best = None
            for s in trn[k]:
                if s == t:
                    continue
                dd = dist(frames[s - 1], x)
                if dd < theta and (best is None or dd < best[0]):
                    best = (dd, s)
            if best is not None:
                match = best[1]
                break
            trn[k].append(t)
            k = sfx[k]
        if match is None:
            sfx[t] = 0
            new_symbol[t] = True
        else:
            sfx[t] = match
            L = 0
            while L < match and dist(frames[t - 1 - L], frames[match - 1 - L]) < theta:
                L += 1
            lrs[t] = L
    return Oracle(frames, float(theta), sfx, lrs, trn, new_symbol, dist)


# -------------------------------------------------------- information rate


def compror_cost(oracle):
    """Greedy literal/block coding cost of the series (bits) and the blocks used."""
    N = oracle.N
    if N == 0:
        return 0.0, []
    K = max(1, oracle.n_symbols)
    lit = math.log2(K + 1)
    blk = math.log2(N) + lit
    lrs = oracle.lrs
    cost = 0.0
    blocks = []
    i = 1
    while i <= N:
        m = 0
        while i + m <= N and lrs[i + m] >= m + 1:
            m += 1
        if m >= 1:
            cost += blk
            blocks.append((i, m))
            i += m
        else:
            cost += lit
            i += 1
    return cost, blocks


def information_rate(oracle):
    """Coding gain ``max(0, N log2(K+1) - compror cost)`` in bits."""
    N = oracle.N
    if N == 0:
        return 0.0
    K = max(1, oracle.n_symbols)
    h0 = N * math.log2(K + 1)
    cost, _ = compror_cost(oracle)
    return max(0.0, h0 - cost)


def threshold_candidates(series, grid_size):
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    d = pairwise_distances(series)
    finite = d[np.isfinite(d)]
    dmax = float(finite.max()) if finite.size else 0.0
    if dmax <= 0:
        return np.zeros(0)
    return dmax * np.arange(1, grid_size + 1) / grid_size


def threshold_sweep(series, grid_size=20, dist=pitch_distance):
    """IR over evenly spaced thresholds; returns ``(theta_star, rows)``.

    ``rows`` is a list of ``(theta, ir)``.  Ties pick the smallest theta.
    """
    series = np.asarray(series, dtype=np.float64)
    if len(series) <= 1:
        return 0.0, [(0.0, 0.0)]
    thetas = threshold_candidates(series, grid_size)
    if thetas.size == 0:
        # constant series: any positive threshold merges everything
        thetas = np.arange(1, grid_size + 1) / grid_size
    rows = [(float(th), information_rate(build_oracle(series, th, dist))) for th in thetas]
    best = max(rows, key=lambda r: (r[1], -r[0]))
    return best[0], rows


def ir_curve_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta", "ir"])
    for th, ir in rows:
        w.writerow([f"{th:.6g}", f"{ir:.6f}"])
    return buf.getvalue()


# -------------------------------------------------------- pattern discovery


@dataclass(frozen=True)
class Pattern:
    occurrences: tuple  # ((start_frame, length), ...) 1-based, sorted

    @property
    def length(self):
        return min(l for _, l in self.occurrences)

    def intervals(self):
        return [(s, s + l) for s, l in self.occurrences]


def _oracle_pairs(oracle, min_len):
    """``(start, start', length)`` per state with a long enough repeated suffix.

    Pairs on one diagonal that lie inside an earlier-starting pair are dropped.
    """
    by_offset = {}
    for t in range(1, oracle.N + 1):
        L = oracle.lrs[t]
        if L >= min_len:
            by_offset.setdefault(t - oracle.sfx[t], []).append((t - L + 1, t))
    pairs = []
    for d, items in sorted(by_offset.items()):
        reach = -1
        for start, end in sorted(items, key=lambda x: (x[0], -x[1])):
            if end <= reach:
                continue
            reach = end
            pairs.append((start - d, start, end - start + 1))
    return pairs


def find_patterns(oracle, min_len=2):
    """Repeated segments as classes of equal-length, mutually matching occurrences.

    Oracle pairs tie frames together; the ties are closed transitively, so
    ``A ~ B`` and ``B ~ C`` also report ``A ~ C``.  Maximal aligned runs of
    tied frames become occurrences, runs with the same content form one
    pattern, and a pattern that sits at a fixed offset inside every
    occurrence of a longer one is dropped.
    """
    if min_len < 2:
        raise ValueError("min_len must be at least 2")
    N = oracle.N
    pairs = _oracle_pairs(oracle, min_len)
    if not pairs:
        return []
    parent = list(range(N + 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b, L in pairs:
        for j in range(L):
            ra, rb = find(a + j), find(b + j)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    label = np.array([find(i) for i in range(N + 1)])
    tied = np.zeros(N + 1, dtype=bool)
    for a, b, L in pairs:
        tied[a:a + L] = True
        tied[b:b + L] = True
    label[~tied] = -np.arange(1, N + 2)[~tied]  # untied frames never repeat

    groups = {}
    for d in range(1, N):
        eq = label[1:N + 1 - d] == label[1 + d:N + 1]
        # maximal runs of equal labels at offset d
        edges = np.flatnonzero(np.diff(np.concatenate([[0], eq.astype(np.int8), [0]])))
        for lo, hi in zip(edges[::2], edges[1::2]):
            if hi - lo >= min_len:
                s1 = int(lo) + 1
                content = tuple(label[s1:s1 + hi - lo])
                occ = groups.setdefault(content, set())
                occ.update((s1, s1 + d))

    frames, theta, dist = oracle.frames, oracle.theta, oracle.dist

    def same(s1, s2, L):
        return all(dist(frames[s1 - 1 + j], frames[s2 - 1 + j]) < theta for j in range(L))

    found = []
    for content, starts in groups.items():
        L = len(content)
        kept = []
        for s0 in sorted(starts):
            if all(same(s0, k, L) for k in kept):
                kept.append(s0)
        if len(kept) >= 2:
            found.append((content, kept))

    def explained(content, starts):
        L = len(content)
        for big, big_starts in found:
            if len(big) <= L:
                continue
            occ = set(big_starts)
            for k in range(len(big) - L + 1):
                if big[k:k + L] == content and all(s0 - k in occ for s0 in starts):
                    return True
        return False

    patterns = [Pattern(tuple((s0, len(c)) for s0 in starts)) for c, starts in found if not explained(c, starts)]
    patterns.sort(key=lambda p: (p.occurrences[0], -p.length))
    return patterns


def pattern_csv(patterns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pattern_id", "occurrence_start_frame", "length"])
    for pid, p in enumerate(patterns):
        for s, l in p.occurrences:
            w.writerow([pid, s, l])
    return buf.getvalue()
