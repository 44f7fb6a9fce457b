import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from melodycont import gradcheck as G
from melodycont import kernel as K


def fd_grad(f, x, h=1e-6):
    """Plain central differences, written independently of the package helper."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        dn = f(x)
        x[idx] = old
        g[idx] = (up - dn) / (2 * h)
    return g


@pytest.mark.parametrize("name", sorted(G.kernel_cases()))
def test_kernel_gradient_matches_finite_differences(name):
    errs = [G.check_kernel(name, seed) for seed in range(5)]
    assert max(errs) < G.KERNEL_TOL


def test_independent_fd_on_lstm_layer():
    gen = np.random.default_rng(3)
    T, B, D, H = 4, 2, 3, 2
    seq = gen.normal(size=(T, B, D))
    wx, wh, b = gen.normal(size=(D, 4 * H)), gen.normal(size=(H, 4 * H)), gen.normal(size=4 * H)
    w = gen.normal(size=(T, B, H))

    def loss(wh_arr):
        out = K.lstm_layer(K.Tensor(seq), K.Tensor(wx), K.Tensor(wh_arr), K.Tensor(b))
        return float((out.data * w).sum())

    leaf = K.Tensor(wh.copy(), requires_grad=True)
    out = K.lstm_layer(K.Tensor(seq), K.Tensor(wx), leaf, K.Tensor(b))
    K.sum_(K.mul(out, K.Tensor(w))).backward()
    assert G.rel_error(leaf.grad, fd_grad(loss, wh)) < 1e-6


def test_fused_scan_equals_stepwise_unroll():
    gen = np.random.default_rng(0)
    T, B, D, H = 6, 3, 4, 5
    seq = gen.normal(size=(T, B, D))
    params = [gen.normal(size=(D, 4 * H)), gen.normal(size=(H, 4 * H)), gen.normal(size=4 * H)]
    w = gen.normal(size=(T, B, H))
    results = []
    for fn in (K.lstm_layer, K.lstm_layer_stepwise):
        for reverse in (False, True):
            leaves = [K.Tensor(p.copy(), requires_grad=True) for p in params]
            out = fn(K.Tensor(seq), *leaves, reverse=reverse)
            K.sum_(K.mul(out, K.Tensor(w))).backward()
            results.append((reverse, out.data, [l.grad for l in leaves]))
    fused = [r for r in results[:2]]
    step = [r for r in results[2:]]
    for (rv, a, ga), (_, b, gb) in zip(fused, step):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
        for x, y in zip(ga, gb):
            np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-12)


def test_gradient_accumulates_over_fanout():
    x = K.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    y = K.sum_(K.add(K.mul(x, x), x))
    y.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_model_losses_pass_directional_checks():
    assert G.check_vae_loss(0) < G.LOSS_TOL
    for v in ("b1", "b2", "proposed"):
        assert G.check_predictor_loss(0, v) < G.LOSS_TOL


def test_softmax_ce_value_and_errors():
    logits = K.Tensor(np.log(np.array([[0.5, 0.25, 0.25]])))
    assert K.softmax_ce(logits, [0]).item() == pytest.approx(np.log(2))
    with pytest.raises(IndexError):
        K.softmax_ce(logits, [3])
    with pytest.raises(K.DimensionError):
        K.matmul(K.Tensor(np.ones((2, 3))), K.Tensor(np.ones((2, 3))))


def test_kl_of_standard_normal_is_zero():
    z = K.Tensor(np.zeros((2, 3)))
    assert K.kl_diag_gaussian(z, z).item() == 0.0


def test_adam_first_step_moves_by_lr_times_sign():
    store = K.ParamStore(np.float64)
    store.add("w", np.array([1.0, -2.0, 0.5]))
    store["w"].grad[...] = np.array([0.3, -4.0, 1e-3])
    opt = K.AdamState(store, lr=0.1)
    K.adam_step(store, opt)
    # bias-corrected first step is lr * g / (|g| + eps')
    np.testing.assert_allclose(store["w"].data, [0.9, -1.9, 0.4], atol=1e-4)
    assert np.all(store["w"].grad == 0)


def test_adam_matches_reference_over_steps():
    gen = np.random.default_rng(1)
    w0 = gen.normal(size=4)
    grads = gen.normal(size=(5, 4))
    store = K.ParamStore(np.float64)
    store.add("w", w0)
    opt = K.AdamState(store, lr=0.01)
    m = np.zeros(4)
    v = np.zeros(4)
    w = w0.copy()
    for t, g in enumerate(grads, 1):
        store["w"].grad[...] = g
        K.adam_step(store, opt)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(store["w"].data, w, rtol=1e-12)


def test_clip_grad_norm():
    store = K.ParamStore(np.float64)
    store.add("a", np.zeros(2))
    store["a"].grad[...] = [3.0, 4.0]
    K.clip_grad_norm(store, 1.0)
    np.testing.assert_allclose(store["a"].grad, [0.6, 0.8])


def test_checkpoint_layout_and_round_trip(tmp_path):
    store = K.ParamStore()
    store.add("enc.w", np.arange(6, dtype=np.float32).reshape(2, 3))
    store.add("b", np.array([1.5], dtype=np.float32))
    blob = K.dump_checkpoint(store)
    assert blob[:4] == b"MLGC"
    assert struct.unpack_from("<II", blob, 4) == (1, 2)
    (nlen,) = struct.unpack_from("<H", blob, 12)
    assert blob[14:14 + nlen] == b"enc.w"
    rank = blob[14 + nlen]
    assert rank == 2
    assert struct.unpack_from("<II", blob, 15 + nlen) == (2, 3)
    assert np.frombuffer(blob, "<f4", 6, 23 + nlen).tolist() == list(range(6))
    path = tmp_path / "x.mlgc"
    K.save_checkpoint(path, store)
    back = K.load_checkpoint(path)
    assert list(back) == ["enc.w", "b"]
    np.testing.assert_array_equal(back["enc.w"], store["enc.w"].data)
    assert K.dump_checkpoint(back) == blob


def test_checkpoint_rejects_corruption():
    store = K.ParamStore()
    store.add("w", np.ones(3, dtype=np.float32))
    blob = K.dump_checkpoint(store)
    with pytest.raises(K.CheckpointError):
        K.parse_checkpoint(b"XXXX" + blob[4:])
    with pytest.raises(K.CheckpointError):
        K.parse_checkpoint(blob[:-2])


def test_rng_streams_are_named_and_reproducible():
    a = K.Rng(5, "vae").normal((3, 2))
    b = K.Rng(5, "vae").normal((3, 2))
    c = K.Rng(5, "predictor").normal((3, 2))
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert K.Rng(5).child("vae").uniform() == K.Rng(5, "vae").uniform()


def test_box_muller_moments():
    z = K.Rng(0).normal(200001)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1) < 0.01


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 16))
def test_matmul_gradient_property(m, n, seed):
    gen = np.random.default_rng(seed)
    a, b = gen.normal(size=(m, 3)), gen.normal(size=(3, n))
    w = gen.normal(size=(m, n))
    la = K.Tensor(a, requires_grad=True)
    K.sum_(K.mul(K.matmul(la, K.Tensor(b)), K.Tensor(w))).backward()
    np.testing.assert_allclose(la.grad, w @ b.T, rtol=1e-12)


def test_nonfinite_values_are_reported():
    with pytest.raises(K.NonFiniteError):
        K.Tensor(np.array([np.nan]))
