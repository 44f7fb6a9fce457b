import numpy as np
import pytest

from melodycont import kernel as K
from melodycont.ec2vae import EC2VAE, VaeConfig, loss_csv, train_vae, vae_loss
from melodycont.symbolic import HOLD, REST, song_segments
from melodycont.synth import synth_corpus

TINY = VaeConfig.toy(zp_dim=4, zr_dim=4, enc_hidden=8, dec_hidden=8, rhythm_hidden=6, epochs=2, batch_size=4)


@pytest.fixture(scope="module")
def segments():
    return [s for song in synth_corpus(3, 2) for s in song_segments(song)]


def test_shapes(segments):
    m = EC2VAE(TINY)
    M = np.stack([s.melody for s in segments[:3]])
    C = np.stack([s.chroma for s in segments[:3]])
    lp = m.encode(M, C)
    assert lp.z_p.shape == (3, 4) and lp.z_r.shape == (3, 4) and lp.z.shape == (3, 8)
    assert m.decode(lp.z_p, lp.z_r, C).shape == (3, 32, 130)
    assert m.rhythm_decode(lp.z_r).shape == (3, 32, 3)
    one = m.encode(M[0], C[0])
    assert one.z_p.shape == (4,)
    assert m.decode(one.z_p, one.z_r, C[0]).shape == (32, 130)
    with pytest.raises(K.DimensionError):
        m.encode(M[:, :16], C[:, :16])
    with pytest.raises(K.DimensionError):
        m.decode(lp.z_p[:, :3], lp.z_r, C)


def test_decoded_tokens_are_valid_grids(segments):
    m = EC2VAE(TINY)
    M = np.stack([s.melody for s in segments[:4]])
    C = np.stack([s.chroma for s in segments[:4]])
    toks = m.reconstruct(M, C)
    assert toks.shape == M.shape and toks.min() >= 0 and toks.max() <= REST
    # a HOLD never opens a segment or follows a rest
    assert not (toks[:, 0] == HOLD).any()
    assert not ((toks[:, 1:] == HOLD) & (toks[:, :-1] == REST)).any()


def test_loss_terms_are_finite_and_nonnegative(segments):
    m = EC2VAE(TINY)
    M = np.stack([s.melody for s in segments[:4]])
    C = np.stack([s.chroma for s in segments[:4]])
    total, ce_m, ce_r, kl = vae_loss(m, M, C, K.Rng(0, "t"))
    assert ce_m > 0 and ce_r > 0 and kl >= 0
    assert total == pytest.approx(ce_m + ce_r + TINY.beta / TINY.n * kl, rel=1e-5)


def test_training_is_deterministic(segments):
    a, rows_a = train_vae(segments[:8], TINY)
    b, rows_b = train_vae(segments[:8], TINY)
    assert rows_a == rows_b
    assert K.dump_checkpoint(a.params) == K.dump_checkpoint(b.params)
    c, _ = train_vae(segments[:8], VaeConfig.toy(**{**TINY.__dict__, "seed": 1}))
    assert K.dump_checkpoint(c.params) != K.dump_checkpoint(a.params)
    assert loss_csv(rows_a).splitlines()[0] == "epoch,ce_melody,ce_rhythm,kl,total"


def test_overfit_one_segment(segments):
    seg = segments[1]
    cfg = VaeConfig.toy(epochs=800, batch_size=1, lr=1e-2)
    m, rows = train_vae([seg], cfg)
    assert rows[-1][1] < 0.05
    assert (m.reconstruct(seg.melody, seg.chroma) == seg.melody).all()


def test_config_validation():
    with pytest.raises(ValueError):
        VaeConfig(zp_dim=0)
    with pytest.raises(ValueError):
        VaeConfig(teacher_forcing=1.5)
