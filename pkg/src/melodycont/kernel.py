"""Small dense-tensor autodiff kernel.

Tensors wrap numpy arrays and record the operation that produced them.
Calling ``backward()`` on a scalar walks the recorded graph in reverse
topological order and *accumulates* gradients into ``.grad`` of every
tensor that requires them.  Accumulation means a parameter shared across
the steps of an unrolled recurrence needs no special handling.

Parameters are float32 by default.  Every op preserves the dtype of its
inputs, so a model can be cast to float64 for finite-difference checks.
"""

import math
import struct
from collections import OrderedDict

import numpy as np

CHECK_FINITE = True


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, parents=(), backward=None, requires_grad=None, name=None):
        data = np.asarray(data)
        if data.dtype.kind != "f":
            data = data.astype(np.float32)
        if CHECK_FINITE and not np.isfinite(data).all():
            raise NonFiniteError(f"non-finite values produced ({name or 'tensor'})")
        self.data = data
        self.grad = None
        self._parents = parents
        self._backward = backward
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        if isinstance(g, _Sparse):
            self.grad[g.index] += g.value
        else:
            self.grad += g

    def backward(self, grad=None):
        """Backpropagate from this tensor (a scalar unless ``grad`` is given)."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        owned = set()
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if parent._backward is None:
                    parent._accumulate(pg)
                elif isinstance(pg, _Sparse):
                    buf = grads.get(pid)
                    if buf is None:
                        buf = np.zeros_like(parent.data)
                    elif pid not in owned:
                        buf = buf.copy()
                    buf[pg.index] += pg.value
                    grads[pid] = buf
                    owned.add(pid)
                elif pid in grads:
                    if pid in owned:
                        grads[pid] += pg
                    else:
                        grads[pid] = grads[pid] + pg
                        owned.add(pid)
                else:
                    grads[pid] = pg


class _Sparse:
    """Gradient that is nonzero only on ``index`` of the parent."""

    __slots__ = ("index", "value")

    def __init__(self, index, value):
        self.index = index
        self.value = value


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=False)


def _const(x, like):
    return np.asarray(x, dtype=like.dtype)


# ---------------------------------------------------------------- core ops


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(out, (a, b), backward, name="matmul")


def add(a, b):
    """Elementwise add; ``b`` may be a 1-d bias matching the last axis of ``a``."""
    if a.shape == b.shape:
        def backward(g):
            return g, g
    elif b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        def backward(g):
            return g, g.reshape(-1, g.shape[-1]).sum(axis=0)
    else:
        raise DimensionError(f"add shapes {a.shape} + {b.shape}")
    return Tensor(a.data + b.data, (a, b), backward, name="add")


def sub(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"sub shapes {a.shape} - {b.shape}")
    return Tensor(a.data - b.data, (a, b), lambda g: (g, -g), name="sub")


def mul(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes {a.shape} * {b.shape}")
    return Tensor(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), name="mul")


def scale(a, c):
    c = float(c)
    return Tensor(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,), name="scale")


def tanh(a):
    y = np.tanh(a.data)
    return Tensor(y, (a,), lambda g: (g * (1.0 - y * y),), name="tanh")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    y = _sigmoid(a.data)
    return Tensor(y, (a,), lambda g: (g * y * (1.0 - y),), name="sigmoid")


def concat(tensors, axis=-1):
    tensors = list(tensors)
    ref = tensors[0].data
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.data.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise DimensionError(f"concat shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def backward(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return parts

    return Tensor(out, tuple(tensors), backward, name="concat")


def slice_(a, start, stop, axis=-1):
    ax = axis % a.data.ndim
    if not 0 <= start < stop <= a.shape[ax]:
        raise DimensionError(f"slice [{start}:{stop}] of axis size {a.shape[ax]}")
    idx = [slice(None)] * a.data.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)

    return Tensor(a.data[idx], (a,), lambda g: (_Sparse(idx, g),), name="slice")


def take(a, i):
    """Select index ``i`` along axis 0 (drops the axis)."""
    if not 0 <= i < a.shape[0]:
        raise DimensionError(f"take index {i} of axis size {a.shape[0]}")

    return Tensor(a.data[i], (a,), lambda g: (_Sparse(i, g),), name="take")


def stack(tensors):
    tensors = list(tensors)
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise DimensionError("stack needs equal shapes")
    out = np.stack([t.data for t in tensors])
    return Tensor(out, tuple(tensors), lambda g: list(g), name="stack")


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return Tensor(out, (a,), lambda g: (g.reshape(old),), name="reshape")


def gather_rows(w, idx):
    """Rows of a 2-d table, i.e. an embedding lookup / one-hot matmul."""
    idx = np.asarray(idx, dtype=np.int64)
    if w.data.ndim != 2 or idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= w.shape[0])):
        raise DimensionError("gather_rows index out of range")

    def backward(g):
        full = np.zeros_like(w.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor(w.data[idx], (w,), backward, name="gather")


def softmax(a):
    x = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor(y, (a,), backward, name="softmax")


def sum_(a):
    return Tensor(a.data.sum(), (a,), lambda g: (np.full_like(a.data, g),), name="sum")


# ------------------------------------------------------------------ LSTM


def lstm_step(gx, state, wh):
    """One fused LSTM step.

    ``gx`` holds the precomputed input projection ``x @ Wx + b`` (B x 4H),
    ``state`` the concatenated ``[h | c]`` (B x 2H), ``wh`` the recurrent
    weights (H x 4H).  Gate order: input, forget, cell, output.
    Returns the new ``[h | c]``.
    """
    B, H2 = state.shape
    H = H2 // 2
    if gx.shape != (B, 4 * H) or wh.shape != (H, 4 * H):
        raise DimensionError(f"lstm_step shapes gx={gx.shape} state={state.shape} wh={wh.shape}")
    h_prev = state.data[:, :H]
    c_prev = state.data[:, H:]
    z = gx.data + h_prev @ wh.data
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H:2 * H])
    u = np.tanh(z[:, 2 * H:3 * H])
    o = _sigmoid(z[:, 3 * H:])
    c = f * c_prev + i * u
    tc = np.tanh(c)
    h = o * tc
    out = np.concatenate([h, c], axis=1)

    def backward(g):
        gh = g[:, :H]
        gc = g[:, H:] + gh * o * (1.0 - tc * tc)
        dz = np.empty_like(z)
        dz[:, :H] = gc * u * i * (1.0 - i)
        dz[:, H:2 * H] = gc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = gc * i * (1.0 - u * u)
        dz[:, 3 * H:] = gh * tc * o * (1.0 - o)
        dstate = np.concatenate([dz @ wh.data.T, gc * f], axis=1)
        return dz, dstate, h_prev.T @ dz

    return Tensor(out, (gx, state, wh), backward, name="lstm")


def lstm_cell(x, h_prev, c_prev, wx, wh, b):
    """Standard LSTM cell; returns ``(h, c)``."""
    H = h_prev.shape[1]
    if wx.shape != (x.shape[1], 4 * H) or b.shape != (4 * H,):
        raise DimensionError("lstm_cell parameter shapes")
    state = lstm_step(add(matmul(x, wx), b), concat([h_prev, c_prev], axis=1), wh)
    return slice_(state, 0, H, axis=1), slice_(state, H, 2 * H, axis=1)


def lstm_scan(gx, wh, state0=None, reverse=False, emb=None, feed=None):
    """Run an LSTM over precomputed input projections as one fused op.

    ``gx`` is T x B x 4H.  When ``emb`` (V x 4H) is given, step ``t`` also adds
    the row ``emb[feed(t, h_prev)]``; ``feed`` returns B token indices and gets
    ``h_prev=None`` on the first step.  The chosen indices are treated as
    constants, so gradients flow into ``gx``, ``wh``, ``emb`` and ``state0``.
    Returns the hidden states, T x B x H (in time order even when reversed).
    """
    T, B, G = gx.shape
    H = wh.shape[0]
    if G != 4 * H or wh.shape != (H, 4 * H):
        raise DimensionError(f"lstm_scan shapes gx={gx.shape} wh={wh.shape}")
    if emb is not None and emb.shape[1] != G:
        raise DimensionError("lstm_scan embedding width")
    dtype = gx.dtype
    if state0 is None:
        h = np.zeros((B, H), dtype=dtype)
        c = np.zeros((B, H), dtype=dtype)
    else:
        if state0.shape != (B, 2 * H):
            raise DimensionError("lstm_scan initial state shape")
        h, c = state0.data[:, :H], state0.data[:, H:]
    W = wh.data
    steps = list(range(T - 1, -1, -1)) if reverse else list(range(T))
    out = np.empty((T, B, H), dtype=dtype)
    cache = []
    first = True
    for t in steps:
        z = gx.data[t] + h @ W
        tok = None
        if emb is not None:
            tok = np.asarray(feed(t, None if first else h), dtype=np.int64)
            z = z + emb.data[tok]
        first = False
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        u = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_new = f * c + i * u
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((t, tok, h, c, i, f, u, o, tc))
        h, c = h_new, c_new
        out[t] = h
    parents = (gx, wh) + ((state0,) if state0 is not None else ()) + ((emb,) if emb is not None else ())

    def backward(gout):
        dgx = np.zeros_like(gx.data)
        dW = np.zeros_like(W)
        demb = np.zeros_like(emb.data) if emb is not None else None
        dh = np.zeros((B, H), dtype=dtype)
        dc = np.zeros((B, H), dtype=dtype)
        for t, tok, h_prev, c_prev, i, f, u, o, tc in reversed(cache):
            gh = gout[t] + dh
            gc = dc + gh * o * (1.0 - tc * tc)
            dz = np.empty((B, G), dtype=dtype)
            dz[:, :H] = gc * u * i * (1.0 - i)
            dz[:, H:2 * H] = gc * c_prev * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = gc * i * (1.0 - u * u)
            dz[:, 3 * H:] = gh * tc * o * (1.0 - o)
            dgx[t] = dz
            dW += h_prev.T @ dz
            dh = dz @ W.T
            dc = gc * f
        if demb is not None:
            toks = np.stack([entry[1] for entry in cache])
            times = [entry[0] for entry in cache]
            np.add.at(demb, toks.reshape(-1), dgx[times].reshape(-1, G))
        grads = [dgx, dW]
        if state0 is not None:
            grads.append(np.concatenate([dh, dc], axis=1))
        if emb is not None:
            grads.append(demb)
        return grads

    return Tensor(out, parents, backward, name="lstm_scan")


def lstm_layer(seq, wx, wh, b, reverse=False, state0=None):
    """Run an LSTM over ``seq`` (T x B x D); returns hidden states (T x B x H)."""
    T, B, D = seq.shape
    H = wh.shape[0]
    if wx.shape != (D, 4 * H) or b.shape != (4 * H,):
        raise DimensionError(f"lstm_layer input {seq.shape} vs wx {wx.shape}")
    gx = reshape(add(matmul(reshape(seq, (T * B, D)), wx), b), (T, B, 4 * H))
    return lstm_scan(gx, wh, state0=state0, reverse=reverse)


def lstm_layer_stepwise(seq, wx, wh, b, reverse=False, state0=None):
    """Same as ``lstm_layer`` but unrolled from ``lstm_step`` nodes."""
    T, B, D = seq.shape
    H = wh.shape[0]
    gx = reshape(add(matmul(reshape(seq, (T * B, D)), wx), b), (T, B, 4 * H))
    state = state0 if state0 is not None else as_tensor(np.zeros((B, 2 * H), dtype=seq.dtype))
    hs = [None] * T
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        state = lstm_step(take(gx, t), state, wh)
        hs[t] = slice_(state, 0, H, axis=1)
    return stack(hs)


def bilstm_layer(seq, fwd, bwd):
    """Bidirectional LSTM; ``fwd``/``bwd`` are ``(wx, wh, b)`` triples.

    Output is T x B x 2H with forward states first.
    """
    hf = lstm_layer(seq, *fwd)
    hb = lstm_layer(seq, *bwd, reverse=True)
    return concat([hf, hb], axis=-1)


# ------------------------------------------------------------------ losses


def softmax_ce(logits, targets):
    """Mean over rows of ``-log softmax(logits)[target]``."""
    targets = np.asarray(targets, dtype=np.int64)
    L, K = logits.shape
    if targets.shape != (L,):
        raise DimensionError(f"targets shape {targets.shape} vs logits {logits.shape}")
    if L and (targets.min() < 0 or targets.max() >= K):
        raise IndexError("target index out of range")
    x = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=1, keepdims=True))
    logp = x - lse
    loss = -logp[np.arange(L), targets].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(L), targets] -= 1.0
        return (p * (g / L),)

    return Tensor(np.asarray(loss, dtype=logits.dtype), (logits,), backward, name="softmax_ce")


def mse(pred, target):
    target = target.data if isinstance(target, Tensor) else _const(target, pred)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shapes {pred.shape} vs {target.shape}")
    diff = pred.data - target
    n = diff.size

    def backward(g):
        return (g * 2.0 * diff / n,)

    return Tensor(np.asarray((diff * diff).mean(), dtype=pred.dtype), (pred,), backward, name="mse")


def kl_diag_gaussian(mean, logvar):
    """KL(N(mean, exp(logvar)) || N(0, I)) summed over all entries."""
    if mean.shape != logvar.shape:
        raise DimensionError("kl shapes differ")
    ev = np.exp(logvar.data)
    val = 0.5 * (ev + mean.data ** 2 - 1.0 - logvar.data).sum()

    def backward(g):
        return g * mean.data, g * 0.5 * (ev - 1.0)

    return Tensor(np.asarray(val, dtype=mean.dtype), (mean, logvar), backward, name="kl")


def reparameterize(mean, logvar, rng=None, eps=None):
    """``mean + exp(0.5 logvar) * eps`` with ``eps`` from ``rng.normal``."""
    if mean.shape != logvar.shape:
        raise DimensionError("reparameterize shapes differ")
    if eps is None:
        eps = rng.normal(mean.shape)
    eps = _const(eps, mean)
    std = np.exp(0.5 * logvar.data)
    out = mean.data + std * eps

    def backward(g):
        return g, g * 0.5 * std * eps

    return Tensor(out, (mean, logvar), backward, name="reparam")


# ------------------------------------------------------------ randomness


class Rng:
    """Seeded PCG64 stream with Box-Muller normals.

    Sub-streams are derived by name so components can be rerun independently:
    ``Rng(7).child("vae")`` is always the same stream.
    """

    def __init__(self, seed, *path):
        self.seed = int(seed)
        self.path = tuple(path)
        words = [self.seed] + [_name_word(p) for p in self.path]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))

    def child(self, name):
        return Rng(self.seed, *self.path, name)

    def uniform(self, shape=None):
        return self._gen.random(shape)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, seq, p=None):
        return seq[int(self._gen.choice(len(seq), p=p))]

    def permutation(self, n):
        return self._gen.permutation(n)

    def normal(self, shape):
        shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # (0, 1]
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        return z.reshape(shape)


def _name_word(name):
    if isinstance(name, int):
        return name
    import zlib

    return zlib.crc32(str(name).encode("utf-8"))


# ------------------------------------------------------------- parameters


class ParamStore:
    """Ordered name -> parameter tensor map with paired gradient buffers."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params = OrderedDict()

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.grad[...] = 0.0

    def size(self):
        return sum(t.data.size for t in self._params.values())

    def state_dict(self):
        return OrderedDict((k, t.data.copy()) for k, t in self._params.items())

    def load_state_dict(self, arrays):
        if list(arrays) != list(self._params):
            missing = set(self._params) ^ set(arrays)
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for k, v in arrays.items():
            t = self._params[k]
            if tuple(v.shape) != t.shape:
                raise DimensionError(f"{k}: checkpoint shape {v.shape} vs {t.shape}")
            t.data[...] = v

    def astype(self, dtype):
        out = ParamStore(dtype)
        for k, t in self._params.items():
            out.add(k, t.data)
        return out

    def flat_grad_norm(self):
        return float(np.sqrt(sum(float((t.grad.astype(np.float64) ** 2).sum()) for t in self._params.values())))


def clip_grad_norm(store, max_norm):
    norm = store.flat_grad_norm()
    if norm > max_norm > 0:
        k = max_norm / (norm + 1e-12)
        for _, t in store.items():
            t.grad *= k
    return norm


class AdamState:
    def __init__(self, store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {k: np.zeros_like(t.data) for k, t in store.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in store.items()}


def adam_step(store, state):
    """Bias-corrected Adam update of every parameter; zeroes gradients."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for k, t in store.items():
        g = t.grad
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        t.data -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(t.data.dtype)
        g[...] = 0.0


def cosine_lr(lr, lr_final, epoch, epochs):
    """Cosine interpolation from ``lr`` (epoch 1) to ``lr_final`` (last epoch)."""
    if lr_final is None or epochs <= 1:
        return lr
    frac = (epoch - 1) / (epochs - 1)
    return lr_final + 0.5 * (lr - lr_final) * (1.0 + math.cos(math.pi * frac))


# ------------------------------------------------------------- checkpoint

MAGIC = b"MLGC"
VERSION = 1


def save_checkpoint(path, store):
    """Write parameters in the little-endian MLGC v1 layout."""
    with open(path, "wb") as fh:
        fh.write(dump_checkpoint(store))


def dump_checkpoint(store):
    items = store.state_dict().items() if isinstance(store, ParamStore) else store.items()
    items = list(items)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, arr in items:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


class CheckpointError(ValueError):
    pass


def load_checkpoint(path):
    """Read an MLGC checkpoint into an ordered ``name -> float32 array`` dict."""
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


def parse_checkpoint(buf):
    if buf[:4] != MAGIC:
        raise CheckpointError("bad magic")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    off = 12
    out = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
            out[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off != len(buf):
        raise CheckpointError("trailing bytes in checkpoint")
    return out


# ------------------------------------------------------------ init helpers


def init_uniform(rng, shape, fan_in):
    k = 1.0 / np.sqrt(fan_in)
    return (rng.uniform(shape) * 2.0 - 1.0) * k


def add_lstm_params(store, prefix, in_dim, hidden, rng):
    wx = store.add(f"{prefix}.wx", init_uniform(rng, (in_dim, 4 * hidden), hidden))
    wh = store.add(f"{prefix}.wh", init_uniform(rng, (hidden, 4 * hidden), hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    bt = store.add(f"{prefix}.b", b)
    return wx, wh, bt


def add_linear_params(store, prefix, in_dim, out_dim, rng):
    w = store.add(f"{prefix}.w", init_uniform(rng, (in_dim, out_dim), in_dim))
    b = store.add(f"{prefix}.b", np.zeros(out_dim))
    return w, b


def linear(x, w, b):
    return add(matmul(x, w), b)
