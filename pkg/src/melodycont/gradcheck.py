"""Central finite-difference checks for the autodiff kernel and model losses.

Every case is run in float64.  Kernel cases compare full gradients; the
model losses are compared along random directions in parameter space,
which keeps the number of loss evaluations independent of model size.
"""

import numpy as np

from . import kernel as K

KERNEL_TOL = 1e-4
LOSS_TOL = 1e-3


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def _project(out, w):
    """Scalar ``sum(out * w)`` so a non-scalar op has a generic upstream gradient."""
    return K.sum_(K.mul(out, K.as_tensor(w, like=out)))


def _lstm_feed(T, B, V, seed):
    table = np.random.default_rng(seed).integers(0, V, size=(T, B))

    def feed(t, h_prev):
        if h_prev is None:
            return np.zeros(B, dtype=np.int64)
        # data dependent but piecewise constant in h
        return (table[t] + (h_prev[:, 0] > 0)) % V

    return feed


def kernel_cases():
    """name -> builder(gen) returning ``(fn, arrays)``; ``fn(*tensors)`` is a scalar Tensor."""
    c = {}

    def unary(op, shape, positive=False):
        def build(g):
            x = g.normal(size=shape)
            if positive:
                x = np.abs(x) + 0.5
            w = g.normal(size=np.shape(op(K.Tensor(x)).data))
            return (lambda a: _project(op(a), w)), [x]
        return build

    def binary(op, sa, sb):
        def build(g):
            a, b = g.normal(size=sa), g.normal(size=sb)
            w = g.normal(size=op(K.Tensor(a), K.Tensor(b)).shape)
            return (lambda x, y: _project(op(x, y), w)), [a, b]
        return build

    c["matmul"] = binary(K.matmul, (3, 4), (4, 5))
    c["add"] = binary(K.add, (3, 4), (3, 4))
    c["add_bias"] = binary(K.add, (3, 4), (4,))
    c["sub"] = binary(K.sub, (3, 4), (3, 4))
    c["mul"] = binary(K.mul, (3, 4), (3, 4))
    c["scale"] = unary(lambda a: K.scale(a, -1.7), (3, 4))
    c["tanh"] = unary(K.tanh, (3, 4))
    c["sigmoid"] = unary(K.sigmoid, (3, 4))
    c["softmax"] = unary(K.softmax, (3, 6))
    c["sum"] = unary(K.sum_, (3, 4))
    c["reshape"] = unary(lambda a: K.reshape(a, (6, 2)), (3, 4))
    c["slice"] = unary(lambda a: K.slice_(a, 1, 3, axis=1), (3, 4))
    c["take"] = unary(lambda a: K.take(a, 1), (3, 4))

    def concat_case(g):
        a, b = g.normal(size=(3, 2)), g.normal(size=(3, 4))
        w = g.normal(size=(3, 6))
        return (lambda x, y: _project(K.concat([x, y], axis=1), w)), [a, b]
    c["concat"] = concat_case

    def stack_case(g):
        a, b = g.normal(size=(3, 2)), g.normal(size=(3, 2))
        w = g.normal(size=(2, 3, 2))
        return (lambda x, y: _project(K.stack([x, y]), w)), [a, b]
    c["stack"] = stack_case

    def gather_case(g):
        wt = g.normal(size=(5, 3))
        idx = np.array([0, 2, 2, 4])
        w = g.normal(size=(4, 3))
        return (lambda x: _project(K.gather_rows(x, idx), w)), [wt]
    c["gather_rows"] = gather_case

    def linear_case(g):
        x, wt, b = g.normal(size=(4, 3)), g.normal(size=(3, 2)), g.normal(size=2)
        w = g.normal(size=(4, 2))
        return (lambda a, m, v: _project(K.linear(a, m, v), w)), [x, wt, b]
    c["linear"] = linear_case

    H, B, D, T = 3, 2, 4, 5

    def step_case(g):
        gx, st, wh = g.normal(size=(B, 4 * H)), g.normal(size=(B, 2 * H)), 0.5 * g.normal(size=(H, 4 * H))
        w = g.normal(size=(B, 2 * H))
        return (lambda a, s, m: _project(K.lstm_step(a, s, m), w)), [gx, st, wh]
    c["lstm_step"] = step_case

    def cell_case(g):
        x, h, cc = g.normal(size=(B, D)), g.normal(size=(B, H)), g.normal(size=(B, H))
        wx, wh, b = 0.5 * g.normal(size=(D, 4 * H)), 0.5 * g.normal(size=(H, 4 * H)), g.normal(size=4 * H)
        w1, w2 = g.normal(size=(B, H)), g.normal(size=(B, H))

        def fn(*a):
            hn, cn = K.lstm_cell(*a)
            return K.add(_project(hn, w1), _project(cn, w2))
        return fn, [x, h, cc, wx, wh, b]
    c["lstm_cell"] = cell_case

    def scan_case(reverse, with_state):
        def build(g):
            gx, wh = g.normal(size=(T, B, 4 * H)), 0.5 * g.normal(size=(H, 4 * H))
            arrays = [gx, wh] + ([g.normal(size=(B, 2 * H))] if with_state else [])
            w = g.normal(size=(T, B, H))

            def fn(a, m, *s):
                return _project(K.lstm_scan(a, m, state0=s[0] if s else None, reverse=reverse), w)
            return fn, arrays
        return build
    c["lstm_scan"] = scan_case(False, False)
    c["lstm_scan_reverse"] = scan_case(True, False)
    c["lstm_scan_state"] = scan_case(False, True)

    def scan_feed_case(g):
        V = 4
        gx, wh, emb = g.normal(size=(T, B, 4 * H)), 0.5 * g.normal(size=(H, 4 * H)), g.normal(size=(V, 4 * H))
        w = g.normal(size=(T, B, H))
        seed = int(g.integers(0, 2 ** 31))

        def fn(a, m, e):
            return _project(K.lstm_scan(a, m, emb=e, feed=_lstm_feed(T, B, V, seed)), w)
        return fn, [gx, wh, emb]
    c["lstm_scan_feed"] = scan_feed_case

    def layer_case(g):
        seq = g.normal(size=(T, B, D))
        wx, wh, b = 0.5 * g.normal(size=(D, 4 * H)), 0.5 * g.normal(size=(H, 4 * H)), g.normal(size=4 * H)
        w = g.normal(size=(T, B, H))
        return (lambda s, a, m, v: _project(K.lstm_layer(s, a, m, v), w)), [seq, wx, wh, b]
    c["lstm_layer"] = layer_case

    def bilstm_case(g):
        seq = g.normal(size=(T, B, D))
        ps = [0.5 * g.normal(size=(D, 4 * H)), 0.5 * g.normal(size=(H, 4 * H)), g.normal(size=4 * H)]
        pb = [0.5 * g.normal(size=(D, 4 * H)), 0.5 * g.normal(size=(H, 4 * H)), g.normal(size=4 * H)]
        w = g.normal(size=(T, B, 2 * H))
        return (lambda s, a, m, v, a2, m2, v2: _project(K.bilstm_layer(s, (a, m, v), (a2, m2, v2)), w)), \
            [seq] + ps + pb
    c["bilstm_layer"] = bilstm_case

    def ce_case(g):
        logits = g.normal(size=(6, 5))
        tgt = g.integers(0, 5, size=6)
        return (lambda a: K.softmax_ce(a, tgt)), [logits]
    c["softmax_ce"] = ce_case

    def mse_case(g):
        pred, tgt = g.normal(size=(4, 3)), g.normal(size=(4, 3))
        return (lambda a: K.mse(a, tgt)), [pred]
    c["mse"] = mse_case

    def kl_case(g):
        return K.kl_diag_gaussian, [g.normal(size=(3, 4)), 0.5 * g.normal(size=(3, 4))]
    c["kl_diag_gaussian"] = kl_case

    def reparam_case(g):
        eps = g.normal(size=(3, 4))
        w = g.normal(size=(3, 4))
        return (lambda m, lv: _project(K.reparameterize(m, lv, eps=eps), w)), \
            [g.normal(size=(3, 4)), 0.5 * g.normal(size=(3, 4))]
    c["reparameterize"] = reparam_case
    return c


def analytic_grads(fn, arrays):
    leaves = [K.Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    out.backward()
    return [np.zeros_like(l.data) if l.grad is None else l.grad for l in leaves]


def numeric_grads(fn, arrays, h=1e-5):
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            up = fn(*[K.Tensor(x) for x in arrays]).item()
            a[idx] = old - h
            dn = fn(*[K.Tensor(x) for x in arrays]).item()
            a[idx] = old
            g[idx] = (up - dn) / (2 * h)
        grads.append(g)
    return grads


def check_kernel(name, seed, h=1e-5):
    fn, arrays = kernel_cases()[name](np.random.default_rng(seed))
    ana = analytic_grads(fn, arrays)
    num = numeric_grads(fn, arrays, h)
    return rel_error(np.concatenate([a.ravel() for a in ana]), np.concatenate([n.ravel() for n in num]))


def directional_check(loss_of, store, seed, directions=3, h=1e-4):
    """Worst relative error of ``<grad, v>`` vs the central difference along ``v``."""
    store.zero_grad()
    loss_of().backward()
    grads = {k: t.grad.copy() for k, t in store.items()}
    base = {k: t.data.copy() for k, t in store.items()}
    gen = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(directions):
        v = {k: gen.normal(size=a.shape) for k, a in base.items()}
        norm = np.sqrt(sum(float((x ** 2).sum()) for x in v.values()))
        v = {k: x / norm for k, x in v.items()}
        ana = sum(float((grads[k] * v[k]).sum()) for k in base)
        vals = []
        for sign in (1, -1):
            for k, t in store.items():
                t.data[...] = base[k] + sign * h * v[k]
            vals.append(loss_of().item())
        for k, t in store.items():
            t.data[...] = base[k]
        num = (vals[0] - vals[1]) / (2 * h)
        worst = max(worst, abs(ana - num) / max(abs(ana) + abs(num), 1e-12))
    store.zero_grad()
    return worst


def check_vae_loss(seed, config=None):
    from .ec2vae import EC2VAE, VaeConfig
    from .symbolic import HOLD, REST, sanitize_tokens

    cfg = config or VaeConfig(n=8, zp_dim=3, zr_dim=3, enc_hidden=5, dec_hidden=5, rhythm_hidden=4, seed=seed)
    model = EC2VAE(cfg)
    model.params = model.params.astype(np.float64)
    gen = np.random.default_rng(seed)
    B = 3
    raw = gen.choice(np.r_[60:66, HOLD, REST], size=(B, cfg.n))
    melody = np.stack([sanitize_tokens(r) for r in raw])
    chroma = (gen.random((B, cfg.n, 12)) < 0.25).astype(np.float64)
    eps = (gen.normal(size=(B, cfg.zp_dim)), gen.normal(size=(B, cfg.zr_dim)))
    tf = gen.random((B, cfg.n)) < 0.5
    rng = K.Rng(seed, "gradcheck")
    return directional_check(lambda: model.loss(melody, chroma, rng, eps=eps, tf_mask=tf).total,
                             model.params, seed)


def check_predictor_loss(seed, variant):
    from .predictor import ContinuationTask, LatentPredictor, LatentSequenceExample, PredictorConfig, \
        build_inputs

    task = ContinuationTask(T=4, t=2, n=8)
    cfg = PredictorConfig(layers=3, hidden=4, seed=seed)
    zp, zr = 3, 2
    model = LatentPredictor(variant, cfg, zp, zr, task, dtype=np.float64)
    gen = np.random.default_rng(seed)
    exs = []
    for _ in range(3):
        cf = np.eye(5)[gen.integers(0, 5, size=task.T)]
        exs.append(LatentSequenceExample(gen.normal(size=(task.T, zp)), gen.normal(size=(task.T, zr)), cf))
    x, y = build_inputs(exs, variant, task)
    x, y = x.astype(np.float64), y.astype(np.float64)
    return directional_check(lambda: model.loss(x, y), model.params, seed)


def run_all(seeds, log=print):
    """Run every check over ``seeds``; returns rows ``(name, seed, error, tol, ok)``."""
    from .predictor import Variant

    rows = []
    for name in kernel_cases():
        for s in seeds:
            e = check_kernel(name, s)
            rows.append((name, s, e, KERNEL_TOL, e < KERNEL_TOL))
    for s in seeds:
        e = check_vae_loss(s)
        rows.append(("vae_loss", s, e, LOSS_TOL, e < LOSS_TOL))
        for v in Variant:
            e = check_predictor_loss(s, v)
            rows.append((f"predictor_loss_{v.value}", s, e, LOSS_TOL, e < LOSS_TOL))
    if log is not None:
        for r in rows:
            log(f"{r[0]},{r[1]},{r[2]:.3e},{r[3]:g},{'ok' if r[4] else 'FAIL'}")
    return rows
