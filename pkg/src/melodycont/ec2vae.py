"""Disentangled segment VAE.

A bidirectional LSTM encodes a segment (one-hot melody + chroma per step)
into two Gaussian posteriors: ``z_p`` for pitch contour and ``z_r`` for
rhythm.  Two decoders share the latent:

* the rhythm decoder sees only ``z_r`` and predicts ONSET/HOLD/REST per step;
* the melody decoder sees ``z_p``, ``z_r``, the chroma of the step, its
  previous token and the rhythm decoder's step distribution, and predicts
  the 130-way melody token.

Routing rhythm through its own decoder, whose output conditions the melody
decoder, is what pushes rhythm information into ``z_r``.
"""

import io
import csv
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import kernel as K
from .symbolic import HOLD, REST, N_TOKENS, rhythm_tokens

N_RHYTHM = 3
CHROMA_DIM = 12


@dataclass(frozen=True)
class VaeConfig:
    n: int = 32
    zp_dim: int = 128
    zr_dim: int = 128
    enc_hidden: int = 256
    dec_hidden: int = 256
    rhythm_hidden: int = 64
    beta: float = 0.1
    teacher_forcing: float = 0.5
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    lr_final: float = 0.0  # cosine schedule end point; negative keeps lr constant
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n", "zp_dim", "zr_dim", "enc_hidden", "dec_hidden", "rhythm_hidden",
                     "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.beta < 0 or not 0 <= self.teacher_forcing <= 1 or self.lr <= 0:
            raise ValueError("invalid beta / teacher_forcing / lr")

    @classmethod
    def toy(cls, **kw):
        base = dict(zp_dim=16, zr_dim=16, enc_hidden=64, dec_hidden=64, rhythm_hidden=32)
        base.update(kw)
        return cls(**base)

    @property
    def z_dim(self):
        return self.zp_dim + self.zr_dim


@dataclass
class LatentPair:
    z_p: np.ndarray
    z_r: np.ndarray
    mean_p: np.ndarray
    logvar_p: np.ndarray
    mean_r: np.ndarray
    logvar_r: np.ndarray

    @property
    def z(self):
        return np.concatenate([self.z_p, self.z_r], axis=-1)


@dataclass
class VaeLoss:
    total: K.Tensor
    ce_melody: float
    ce_rhythm: float
    kl: float


def _batch(melody, chroma):
    melody = np.asarray(melody, dtype=np.int64)
    chroma = np.asarray(chroma, dtype=np.float32)
    if melody.ndim == 1:
        melody, chroma = melody[None], chroma[None]
    return melody, chroma


class EC2VAE:
    """Parameters and forward passes of the segment VAE."""

    def __init__(self, config, store=None, dtype=np.float32):
        self.config = config
        if store is None:
            store = self._init_params(config, dtype)
        self.params = store

    @staticmethod
    def _init_params(cfg, dtype):
        rng = K.Rng(cfg.seed, "vae-init")
        s = K.ParamStore(dtype)
        in_dim = N_TOKENS + CHROMA_DIM
        K.add_lstm_params(s, "enc.fwd", in_dim, cfg.enc_hidden, rng)
        K.add_lstm_params(s, "enc.bwd", in_dim, cfg.enc_hidden, rng)
        K.add_linear_params(s, "enc.head", 2 * cfg.enc_hidden, 2 * cfg.z_dim, rng)
        # rhythm decoder: previous rhythm token (+BOS) embedded into gates
        Hr = cfg.rhythm_hidden
        K.add_linear_params(s, "rdec.init", cfg.zr_dim, Hr, rng)
        s.add("rdec.tok", K.init_uniform(rng, (N_RHYTHM + 1, 4 * Hr), Hr))
        K.add_lstm_params(s, "rdec.lstm", cfg.zr_dim, Hr, rng)
        K.add_linear_params(s, "rdec.out", Hr, N_RHYTHM, rng)
        Hd = cfg.dec_hidden
        K.add_linear_params(s, "mdec.init", cfg.z_dim, Hd, rng)
        s.add("mdec.tok", K.init_uniform(rng, (N_TOKENS + 1, 4 * Hd), Hd))
        K.add_lstm_params(s, "mdec.lstm", cfg.z_dim + CHROMA_DIM + N_RHYTHM, Hd, rng)
        K.add_linear_params(s, "mdec.out", Hd, N_TOKENS, rng)
        return s

    # ----------------------------------------------------------- encoder

    def encode_tensors(self, melody, chroma):
        """Posterior ``(mean_p, logvar_p, mean_r, logvar_r)`` tensors (B x dim)."""
        cfg, p = self.config, self.params
        melody, chroma = _batch(melody, chroma)
        B, n = melody.shape
        if n != cfg.n or chroma.shape != (B, n, CHROMA_DIM):
            raise K.DimensionError(f"segment shape {melody.shape}/{chroma.shape} vs n={cfg.n}")
        x = np.zeros((n, B, N_TOKENS + CHROMA_DIM), dtype=p.dtype)
        x[np.arange(n)[:, None], np.arange(B)[None, :], melody.T] = 1.0
        x[:, :, N_TOKENS:] = chroma.transpose(1, 0, 2)
        seq = K.as_tensor(x)
        hf = K.lstm_layer(seq, p["enc.fwd.wx"], p["enc.fwd.wh"], p["enc.fwd.b"])
        hb = K.lstm_layer(seq, p["enc.bwd.wx"], p["enc.bwd.wh"], p["enc.bwd.b"], reverse=True)
        last = K.concat([K.take(hf, n - 1), K.take(hb, 0)], axis=1)
        head = K.linear(last, p["enc.head.w"], p["enc.head.b"])
        zp, zr = cfg.zp_dim, cfg.zr_dim
        mean_p = K.slice_(head, 0, zp, axis=1)
        mean_r = K.slice_(head, zp, zp + zr, axis=1)
        logvar_p = K.slice_(head, zp + zr, 2 * zp + zr, axis=1)
        logvar_r = K.slice_(head, 2 * zp + zr, 2 * (zp + zr), axis=1)
        return mean_p, logvar_p, mean_r, logvar_r

    def encode(self, melody, chroma, rng=None):
        """Encode segment(s).  Returns posterior means unless ``rng`` is given."""
        mp, lp, mr, lr = self.encode_tensors(melody, chroma)
        if rng is None:
            zp, zr = mp.data, mr.data
        else:
            zp = K.reparameterize(mp, lp, rng).data
            zr = K.reparameterize(mr, lr, rng).data
        single = np.asarray(melody).ndim == 1
        pick = (lambda a: a[0].copy()) if single else (lambda a: a.copy())
        return LatentPair(pick(zp), pick(zr), pick(mp.data), pick(lp.data), pick(mr.data), pick(lr.data))

    def encode_segments(self, segments, batch=256):
        zs_p, zs_r = [], []
        for i in range(0, len(segments), batch):
            chunk = segments[i:i + batch]
            lp = self.encode(np.stack([s.melody for s in chunk]), np.stack([s.chroma for s in chunk]))
            zs_p.append(lp.z_p)
            zs_r.append(lp.z_r)
        if not zs_p:
            cfg = self.config
            return np.zeros((0, cfg.zp_dim)), np.zeros((0, cfg.zr_dim))
        return np.concatenate(zs_p), np.concatenate(zs_r)

    # ---------------------------------------------------------- decoders

    def _check_z(self, z_p, z_r):
        cfg = self.config
        if z_p.shape[1] != cfg.zp_dim or z_r.shape[1] != cfg.zr_dim or z_p.shape[0] != z_r.shape[0]:
            raise K.DimensionError(f"latent shapes {z_p.shape}/{z_r.shape} vs config")

    @staticmethod
    def _feeder(bos, teacher, tf_mask, wout, bout, forbid_hold=False):
        """Token policy for ``lstm_scan``: teacher token or greedy prediction."""
        last = {"tok": None}

        def feed(t, h):
            if h is None:
                tok = np.full(teacher.shape[0] if teacher is not None else feed.batch, bos, dtype=np.int64)
            elif teacher is not None and (tf_mask is None or tf_mask[:, t - 1].all()):
                tok = teacher[:, t - 1]
            else:
                logits = h @ wout.data + bout.data
                if forbid_hold and last["tok"] is not None:
                    logits[last["tok"] == REST, HOLD] = -np.inf
                pred = np.argmax(logits, axis=1)
                tok = pred if teacher is None else np.where(tf_mask[:, t - 1], teacher[:, t - 1], pred)
            last["tok"] = tok
            return tok

        return feed

    def rhythm_tensors(self, z_r, teacher=None, tf_mask=None):
        """Rhythm logits for every step (n x B x 3)."""
        cfg, p = self.config, self.params
        B = z_r.shape[0]
        Hr, n = cfg.rhythm_hidden, cfg.n
        h0 = K.tanh(K.linear(z_r, p["rdec.init.w"], p["rdec.init.b"]))
        state = K.concat([h0, K.as_tensor(np.zeros((B, Hr), dtype=p.dtype))], axis=1)
        gz = K.linear(z_r, p["rdec.lstm.wx"], p["rdec.lstm.b"])
        wout, bout = p["rdec.out.w"], p["rdec.out.b"]
        feed = self._feeder(N_RHYTHM, teacher, tf_mask, wout, bout)
        feed.batch = B
        hs = K.lstm_scan(K.stack([gz] * n), p["rdec.lstm.wh"], state0=state, emb=p["rdec.tok"], feed=feed)
        H = K.reshape(hs, (n * B, Hr))
        return K.reshape(K.linear(H, wout, bout), (n, B, N_RHYTHM))

    def melody_tensors(self, z_p, z_r, chroma, rhythm_logits, teacher=None, tf_mask=None):
        cfg, p = self.config, self.params
        B = z_p.shape[0]
        n, Hd = cfg.n, cfg.dec_hidden
        chroma = np.asarray(chroma, dtype=p.dtype)
        if chroma.ndim == 2:
            chroma = np.broadcast_to(chroma, (B,) + chroma.shape)
        if chroma.shape != (B, n, CHROMA_DIM):
            raise K.DimensionError(f"chroma shape {chroma.shape} vs (B, {n}, 12)")
        z = K.concat([z_p, z_r], axis=1)
        h0 = K.tanh(K.linear(z, p["mdec.init.w"], p["mdec.init.b"]))
        state = K.concat([h0, K.as_tensor(np.zeros((B, Hd), dtype=p.dtype))], axis=1)
        # static per-step inputs: z, chroma_t, rhythm distribution_t
        rprob = K.softmax(K.reshape(rhythm_logits, (n * B, N_RHYTHM)))
        zrep = K.reshape(K.stack([z] * n), (n * B, cfg.z_dim))
        chroma_t = K.as_tensor(np.ascontiguousarray(chroma.transpose(1, 0, 2)).reshape(n * B, CHROMA_DIM))
        static = K.concat([zrep, chroma_t, rprob], axis=1)
        gstatic = K.reshape(K.linear(static, p["mdec.lstm.wx"], p["mdec.lstm.b"]), (n, B, 4 * Hd))
        wout, bout = p["mdec.out.w"], p["mdec.out.b"]
        feed = self._feeder(N_TOKENS, teacher, tf_mask, wout, bout, forbid_hold=True)
        feed.batch = B
        hs = K.lstm_scan(gstatic, p["mdec.lstm.wh"], state0=state, emb=p["mdec.tok"], feed=feed)
        H = K.reshape(hs, (n * B, Hd))
        return K.reshape(K.linear(H, wout, bout), (n, B, N_TOKENS))

    def decode(self, z_p, z_r, chroma, teacher=None):
        """Melody logits (n x 130, or B x n x 130 for batched latents)."""
        single = np.asarray(z_p).ndim == 1
        zp = np.atleast_2d(np.asarray(z_p, dtype=self.params.dtype))
        zr = np.atleast_2d(np.asarray(z_r, dtype=self.params.dtype))
        self._check_z(zp, zr)
        zp_t, zr_t = K.as_tensor(zp), K.as_tensor(zr)
        rteach = None if teacher is None else rhythm_tokens(np.atleast_2d(teacher))
        r = self.rhythm_tensors(zr_t, teacher=rteach)
        teacher = None if teacher is None else np.atleast_2d(teacher)
        out = self.melody_tensors(zp_t, zr_t, chroma, r, teacher=teacher).data.transpose(1, 0, 2)
        return out[0] if single else out

    def rhythm_decode(self, z_r):
        """Rhythm logits (n x 3, or B x n x 3)."""
        single = np.asarray(z_r).ndim == 1
        zr = np.atleast_2d(np.asarray(z_r, dtype=self.params.dtype))
        if zr.shape[1] != self.config.zr_dim:
            raise K.DimensionError(f"z_r dim {zr.shape[1]} vs {self.config.zr_dim}")
        out = self.rhythm_tensors(K.as_tensor(zr)).data.transpose(1, 0, 2)
        return out[0] if single else out

    def decode_tokens(self, z_p, z_r, chroma):
        return np.argmax(self.decode(z_p, z_r, chroma), axis=-1)

    def reconstruct(self, melody, chroma):
        lp = self.encode(melody, chroma)
        return self.decode_tokens(lp.z_p, lp.z_r, chroma)

    # -------------------------------------------------------------- loss

    def loss(self, melody, chroma, rng, eps=None, tf_mask=None):
        """Training objective on a batch.

        ``eps`` optionally fixes the reparameterisation noise as a pair of
        arrays; ``tf_mask`` (B x n booleans) fixes which steps are
        teacher-forced.  With neither given both are drawn from ``rng``.
        """
        cfg = self.config
        melody, chroma = _batch(melody, chroma)
        B = melody.shape[0]
        mp, lp, mr, lr = self.encode_tensors(melody, chroma)
        if eps is None:
            eps = (rng.normal(mp.shape), rng.normal(mr.shape))
        zp = K.reparameterize(mp, lp, eps=eps[0])
        zr = K.reparameterize(mr, lr, eps=eps[1])
        if tf_mask is None:
            tf_mask = rng.uniform((B, cfg.n)) < cfg.teacher_forcing
        rtok = rhythm_tokens(melody)
        rlog = self.rhythm_tensors(zr, teacher=rtok, tf_mask=tf_mask)
        mlog = self.melody_tensors(zp, zr, chroma, rlog, teacher=melody, tf_mask=tf_mask)
        n = cfg.n
        ce_m = K.softmax_ce(K.reshape(mlog, (n * B, N_TOKENS)), melody.T.reshape(-1))
        ce_r = K.softmax_ce(K.reshape(rlog, (n * B, N_RHYTHM)), rtok.T.reshape(-1))
        # the CE terms are per token, so KL is spread over the n steps as well
        kl = K.scale(K.add(K.kl_diag_gaussian(mp, lp), K.kl_diag_gaussian(mr, lr)), 1.0 / B)
        total = K.add(K.add(ce_m, ce_r), K.scale(kl, cfg.beta / n))
        return VaeLoss(total, ce_m.item(), ce_r.item(), kl.item())


def vae_loss(model, segment_melody, segment_chroma, rng, **kw):
    """``(total, ce_melody, ce_rhythm, kl)`` as floats."""
    out = model.loss(segment_melody, segment_chroma, rng, **kw)
    return out.total.item(), out.ce_melody, out.ce_rhythm, out.kl


LOSS_COLUMNS = ("epoch", "ce_melody", "ce_rhythm", "kl", "total")


def train_vae(segments, config, log=None):
    """Minibatch Adam training.  Returns ``(model, loss_rows)``."""
    if not segments:
        raise ValueError("cannot train on an empty corpus")
    model = EC2VAE(config)
    melody = np.stack([s.melody for s in segments])
    chroma = np.stack([s.chroma for s in segments])
    rng = K.Rng(config.seed, "vae-train")
    opt = K.AdamState(model.params, lr=config.lr)
    rows = []
    N = len(segments)
    for epoch in range(1, config.epochs + 1):
        opt.lr = K.cosine_lr(config.lr, None if config.lr_final < 0 else config.lr_final, epoch, config.epochs)
        order = rng.permutation(N)
        sums = np.zeros(4)
        for i in range(0, N, config.batch_size):
            idx = order[i:i + config.batch_size]
            out = model.loss(melody[idx], chroma[idx], rng)
            out.total.backward()
            K.clip_grad_norm(model.params, config.clip_norm)
            K.adam_step(model.params, opt)
            w = len(idx)
            sums += w * np.array([out.ce_melody, out.ce_rhythm, out.kl, out.total.item()])
        ce_m, ce_r, kl, total = sums / N
        rows.append((epoch, float(ce_m), float(ce_r), float(kl), float(total)))
        if log is not None:
            log(f"vae epoch {epoch}: ce_melody={ce_m:.4f} ce_rhythm={ce_r:.4f} kl={kl:.3f}")
    return model, rows


def loss_csv(rows, columns=LOSS_COLUMNS):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([r[0]] + [f"{v:.8g}" for v in r[1:]])
    return buf.getvalue()


def config_dict(config):
    return asdict(config)


def config_from_dict(d):
    return VaeConfig(**d)


def with_overrides(config, **kw):
    return replace(config, **kw)
