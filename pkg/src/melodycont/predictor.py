"""Latent continuation: predict the latents of future segments.

A song is cut into ``T`` consecutive segment groups; the first ``t`` are
known.  Three model variants map per-group inputs to the unknown groups:

``BASELINE_I``  unidirectional LSTM stack over the masked full latents;
``BASELINE_II`` bidirectional stack, plus the chord-function condition;
``PROPOSED``    bidirectional stack over masked pitch latents, the
                chord-function condition and the rhythm latent of every
                group, predicting only the pitch latents.
"""

import enum
from dataclasses import dataclass

import numpy as np

from . import kernel as K
from .harmony import N_FUNCTION_DIMS, function_labels
from .symbolic import MelodyGrid, grid_to_notes, quantize, sanitize_tokens, segment_song


class Variant(enum.Enum):
    BASELINE_I = "b1"
    BASELINE_II = "b2"
    PROPOSED = "proposed"

    @classmethod
    def parse(cls, s):
        if isinstance(s, cls):
            return s
        for v in cls:
            if s in (v.value, v.name, v.name.lower()):
                return v
        raise ValueError(f"unknown variant {s!r}")

    @property
    def bidirectional(self):
        return self is not Variant.BASELINE_I


@dataclass(frozen=True)
class ContinuationTask:
    T: int = 10
    t: int = 5
    n: int = 32
    stride: int = 1

    def __post_init__(self):
        if not 0 < self.t < self.T:
            raise ValueError("need 0 < t < T")
        if self.n <= 0 or self.stride <= 0:
            raise ValueError("n and stride must be positive")

    @property
    def horizon(self):
        return self.T - self.t


@dataclass(frozen=True)
class PredictorConfig:
    layers: int = 8
    hidden: int = 64
    residual: bool = True
    lr: float = 1e-3
    epochs: int = 40
    batch_size: int = 32
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("layers, hidden, epochs and batch_size must be positive")


@dataclass
class LatentSequenceExample:
    z_p: np.ndarray   # T x zp
    z_r: np.ndarray   # T x zr
    cf: np.ndarray    # T x 5 one-hot
    song_id: str = ""
    offset: int = 0


def group_functions(labels, n):
    """Modal function label per group of ``n`` cells; ties go to the lower label."""
    groups = len(labels) // n
    out = np.zeros((groups, N_FUNCTION_DIMS), dtype=np.float32)
    for g in range(groups):
        counts = np.bincount(labels[g * n:(g + 1) * n], minlength=N_FUNCTION_DIMS)
        out[g, int(np.argmax(counts))] = 1.0
    return out


def song_latents(song, vae, n):
    """Segments, latents and pooled chord functions of every segment of a song."""
    grid, chroma = quantize(song)
    segments = segment_song(grid, chroma, n)
    if not segments:
        return segments, None, None, None
    z_p, z_r = vae.encode_segments(segments)
    labels = function_labels(song.chords, song.key, len(segments) * n, grid.timestep_sec)
    return segments, z_p, z_r, group_functions(labels, n)


def make_examples(song, vae, task=ContinuationTask()):
    segments, z_p, z_r, cf = song_latents(song, vae, task.n)
    if len(segments) < task.T:
        return []
    return [
        LatentSequenceExample(z_p[o:o + task.T], z_r[o:o + task.T], cf[o:o + task.T], song.song_id, o)
        for o in range(0, len(segments) - task.T + 1, task.stride)
    ]


def input_dim(variant, zp_dim, zr_dim):
    if variant is Variant.BASELINE_I:
        return zp_dim + zr_dim + 1
    if variant is Variant.BASELINE_II:
        return zp_dim + zr_dim + 1 + N_FUNCTION_DIMS
    return zp_dim + 1 + N_FUNCTION_DIMS + zr_dim


def target_dim(variant, zp_dim, zr_dim):
    return zp_dim if variant is Variant.PROPOSED else zp_dim + zr_dim


def build_inputs(examples, variant, task=ContinuationTask()):
    """Stack examples into model inputs (T x B x D) and targets (T-t x B x D')."""
    variant = Variant.parse(variant)
    if isinstance(examples, LatentSequenceExample):
        examples = [examples]
    T, t = task.T, task.t
    zp = np.stack([e.z_p for e in examples], axis=1).astype(np.float32)  # T x B x zp
    zr = np.stack([e.z_r for e in examples], axis=1).astype(np.float32)
    cf = np.stack([e.cf for e in examples], axis=1).astype(np.float32)
    B = zp.shape[1]
    known = np.zeros((T, B, 1), dtype=np.float32)
    known[:t] = 1.0
    if variant is Variant.PROPOSED:
        masked = zp * known
        x = np.concatenate([masked, known, cf, zr], axis=2)
        y = zp[t:]
    else:
        z = np.concatenate([zp, zr], axis=2)
        masked = z * known
        parts = [masked, known] + ([cf] if variant is Variant.BASELINE_II else [])
        x = np.concatenate(parts, axis=2)
        y = z[t:]
    return x, y


class LatentPredictor:
    """Stacked (Bi-)LSTM with identity shortcuts and a per-group linear head."""

    def __init__(self, variant, config, zp_dim, zr_dim, task=ContinuationTask(), store=None, dtype=np.float32):
        self.variant = Variant.parse(variant)
        self.config = config
        self.task = task
        self.zp_dim, self.zr_dim = zp_dim, zr_dim
        self.in_dim = input_dim(self.variant, zp_dim, zr_dim)
        self.out_dim = target_dim(self.variant, zp_dim, zr_dim)
        self.params = store if store is not None else self._init_params(dtype)

    @property
    def width(self):
        return self.config.hidden * (2 if self.variant.bidirectional else 1)

    def _init_params(self, dtype):
        cfg = self.config
        rng = K.Rng(cfg.seed, "predictor-init", self.variant.value)
        s = K.ParamStore(dtype)
        d = self.in_dim
        for layer in range(cfg.layers):
            K.add_lstm_params(s, f"l{layer}.fwd", d, cfg.hidden, rng)
            if self.variant.bidirectional:
                K.add_lstm_params(s, f"l{layer}.bwd", d, cfg.hidden, rng)
            d = self.width
        K.add_linear_params(s, "head", d, self.out_dim, rng)
        return s

    def forward(self, x):
        """Predicted targets for groups t..T-1 as a tensor (T-t x B x out)."""
        cfg, p = self.config, self.params
        x = np.asarray(x, dtype=p.dtype)
        T, B, D = x.shape
        if D != self.in_dim or T != self.task.T:
            raise K.DimensionError(f"inputs {x.shape} vs (T={self.task.T}, B, {self.in_dim})")
        h = K.as_tensor(x)
        for layer in range(cfg.layers):
            fwd = tuple(p[f"l{layer}.fwd.{k}"] for k in ("wx", "wh", "b"))
            if self.variant.bidirectional:
                bwd = tuple(p[f"l{layer}.bwd.{k}"] for k in ("wx", "wh", "b"))
                out = K.bilstm_layer(h, fwd, bwd)
            else:
                out = K.lstm_layer(h, *fwd)
            if cfg.residual and layer > 0:
                out = K.add(out, h)
            h = out
        t = self.task.t
        future = K.reshape(K.slice_(h, t, T, axis=0), ((T - t) * B, self.width))
        y = K.linear(future, p["head.w"], p["head.b"])
        return K.reshape(y, (T - t, B, self.out_dim))

    def predict(self, examples):
        x, _ = build_inputs(examples, self.variant, self.task)
        return self.forward(x).data

    def loss(self, x, y):
        return K.mse(self.forward(x), y)


def forward(variant, inputs, model):
    if model.variant is not Variant.parse(variant):
        raise ValueError("model variant mismatch")
    return model.forward(inputs).data


def evaluate_mse(model, examples, batch=256):
    total, count = 0.0, 0
    for i in range(0, len(examples), batch):
        x, y = build_inputs(examples[i:i + batch], model.variant, model.task)
        pred = model.forward(x).data
        total += float(((pred - y) ** 2).sum())
        count += y.size
    return total / count


def train_predictor(examples, variant, config, zp_dim, zr_dim, task=ContinuationTask(), log=None,
                    max_steps=None):
    """Adam on MSE over the unknown groups.  Returns ``(model, rows)``.

    ``rows`` holds ``(epoch, mse)`` with the mean minibatch loss of each epoch.
    """
    if not examples:
        raise ValueError("cannot train on an empty example list")
    variant = Variant.parse(variant)
    model = LatentPredictor(variant, config, zp_dim, zr_dim, task)
    x_all, y_all = build_inputs(examples, variant, task)
    N = x_all.shape[1]
    rng = K.Rng(config.seed, "predictor-train", variant.value)
    opt = K.AdamState(model.params, lr=config.lr)
    rows = []
    steps = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(N)
        acc = 0.0
        for i in range(0, N, config.batch_size):
            idx = order[i:i + config.batch_size]
            loss = model.loss(x_all[:, idx], y_all[:, idx])
            loss.backward()
            K.clip_grad_norm(model.params, config.clip_norm)
            K.adam_step(model.params, opt)
            acc += loss.item() * len(idx)
            steps += 1
        rows.append((epoch, acc / N))
        if log is not None:
            log(f"predictor[{variant.value}] epoch {epoch}: mse={acc / N:.5f}")
        if max_steps is not None and steps >= max_steps:
            break
    return model, rows


def continue_song(song, vae, model, task=None):
    """Keep the first ``t`` segments of ``song`` and generate the rest up to ``T``.

    Conditions for the unknown groups (chord functions, and for the proposed
    variant the rhythm latents) come from the reference song itself.
    Returns ``(MelodyGrid, notes)``.
    """
    task = task or model.task
    segments, z_p, z_r, cf = song_latents(song, vae, task.n)
    if len(segments) < task.T:
        raise ValueError(f"song has {len(segments)} segments; continuation needs {task.T}")
    T, t = task.T, task.t
    ex = LatentSequenceExample(z_p[:T], z_r[:T], cf[:T], song.song_id, 0)
    pred = model.predict([ex])[:, 0]  # (T-t) x out
    if model.variant is Variant.PROPOSED:
        gen_p, gen_r = pred, z_r[t:T]
    else:
        gen_p, gen_r = pred[:, :model.zp_dim], pred[:, model.zp_dim:]
    chroma = np.stack([segments[i].chroma for i in range(t, T)])
    decoded = vae.decode_tokens(gen_p, gen_r, chroma)  # (T-t) x n
    known = np.concatenate([segments[i].melody for i in range(t)])
    tokens = np.concatenate([known, decoded.reshape(-1)])
    tokens = sanitize_tokens(tokens)
    grid = MelodyGrid(tokens)
    return grid, grid_to_notes(grid)
