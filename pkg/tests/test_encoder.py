import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vinn import nn, sim
from vinn.encoder import (
    AugmentConfig,
    ByolState,
    DivergenceError,
    EncoderError,
    EncoderSpec,
    IdentityEncoder,
    RankDeficientError,
    ZeroNormError,
    augment,
    augment_batch,
    byol_grads,
    byol_loss,
    byol_step,
    dumps_encoder,
    embed_demoset,
    ema_update,
    fit_whitening,
    init_byol_state,
    load_encoder,
    loads_encoder,
    make_encoder,
    random_projection,
    save_encoder,
    train_byol,
    train_encoder,
)


# --- spec validation --------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(kind="conv", obs_dim=3, embed_dim=3),
    dict(kind="identity", obs_dim=3, embed_dim=2),
    dict(kind="byol_mlp", obs_dim=3, embed_dim=2),
    dict(kind="byol_patch", obs_dim=3, embed_dim=4, groups=((0,), (1, 2), (2,))),
    dict(kind="byol_patch", obs_dim=3, embed_dim=3, groups=((0,), (1, 2))),
    dict(kind="whitening", obs_dim=3, embed_dim=2, groups=((0, 1, 2),)),
    dict(kind="random_projection", obs_dim=0, embed_dim=2),
])
def test_bad_specs(kw):
    with pytest.raises(ValueError):
        EncoderSpec(**kw)


def test_sim_spec_partitions_observation():
    spec = sim.sim_encoder_spec()
    assert spec.kind == "byol_patch"
    assert spec.embed_dim == sim.PATCH_FEATURES * len(sim.OBS_GROUPS)


# --- fixed encoders ---------------------------------------------------------

def test_identity_and_dtype():
    enc = IdentityEncoder(3)
    out = enc.encode([1.0, 2.0, 3.0])
    assert out.dtype == np.float32 and out.tolist() == [1, 2, 3]
    with pytest.raises(EncoderError):
        enc.encode([1.0, 2.0])
    with pytest.raises(EncoderError):
        enc.encode([1.0, np.nan, 2.0])


def test_random_projection_is_seeded():
    a, b = random_projection(5, 3, 1), random_projection(5, 3, 1)
    assert a == b and a != random_projection(5, 3, 2)


def test_whitening_yields_identity_covariance(rng):
    x = rng.normal(size=(500, 4)) @ rng.normal(size=(4, 4)) + 3.0
    enc = fit_whitening(x, 3)
    y = enc.encode_batch(x).astype(np.float64)
    assert np.allclose(y.mean(axis=0), 0, atol=1e-4)
    assert np.allclose(np.cov(y, rowvar=False, bias=True), np.eye(3), atol=1e-3)


def test_whitening_rank_deficient_reports_components(rng):
    x = rng.normal(size=(50, 2)) @ np.array([[1.0, 0, 0], [0, 1.0, 0]])
    with pytest.raises(RankDeficientError) as e:
        fit_whitening(x, 3)
    assert e.value.dims == [2]
    with pytest.raises(RankDeficientError):
        fit_whitening(x[:2], 2)


# --- augmentation -----------------------------------------------------------

def test_augment_deterministic_by_seed():
    cfg = AugmentConfig()
    x = np.arange(6.0)
    assert np.array_equal(augment(x, cfg, 3), augment(x, cfg, 3))
    assert not np.array_equal(augment(x, cfg, 3), augment(x, cfg, 4))


def test_augment_identity_when_disabled():
    cfg = AugmentConfig(noise_std=0.0, dropout_prob=0.0, scale_jitter=(1.0, 1.0))
    x = np.arange(6.0)
    assert np.array_equal(augment(x, cfg, 0), x)


def test_group_dropout_is_shared_within_group(rng):
    groups = ((0, 1, 2), (3, 4))
    cfg = AugmentConfig(noise_std=0.0, dropout_prob=0.5, scale_jitter=(1.0, 1.0), dropout_groups=groups)
    out = augment_batch(np.ones((200, 5)), cfg, rng)
    for g in groups:
        block = out[:, list(g)]
        assert np.all((block == 0).all(axis=1) | (block != 0).all(axis=1))
    # inverted dropout keeps the mean
    assert abs(out.mean() - 1.0) < 0.15


@pytest.mark.parametrize("kw", [dict(noise_std=-1), dict(dropout_prob=1.0), dict(scale_jitter=(1.1, 1.2)),
                                dict(dropout_groups=((0, 1), (1, 2)))])
def test_bad_augment_config(kw):
    with pytest.raises(ValueError):
        AugmentConfig(**kw)


# --- BYOL -------------------------------------------------------------------

def mlp_state(seed=0, **kw):
    return init_byol_state(EncoderSpec("byol_mlp", 4, 3, (6,), seed=seed), **kw)


def test_initial_target_equals_online():
    s = mlp_state()
    assert s.target == s.online and s.target is not s.online
    assert s.predictor.dims == [3, 3, 3]


def test_loss_is_zero_with_identity_predictor(rng):
    s = mlp_state()
    # relu(y) - relu(-y) = y, so the predictor is exactly the identity; target == online
    eye = np.eye(3)
    s.predictor = nn.MLPParams([np.vstack([eye, -eye]), np.hstack([eye, -eye])], [np.zeros(6), np.zeros(3)])
    x = rng.normal(size=(5, 4))
    assert byol_loss(s, x, x) == pytest.approx(0.0, abs=1e-12)


def test_loss_symmetric_in_views(rng):
    s = mlp_state()
    s.target = s.target.with_arrays(a + 0.1 for a in s.target.arrays())
    a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    assert byol_loss(s, a, b) == pytest.approx(byol_loss(s, b, a), abs=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_loss_range(seed):
    rng = np.random.default_rng(seed)
    s = mlp_state(seed % 1000)
    try:
        loss = byol_loss(s, rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    except ZeroNormError:
        return
    assert 0.0 <= loss <= 4.0


def test_zero_norm_reports_branch():
    s = mlp_state()
    s.predictor = s.predictor.zeros_like()
    with pytest.raises(ZeroNormError, match="view1->view2"):
        byol_loss(s, np.ones((1, 4)), np.ones((1, 4)))


def test_target_gets_no_gradient(rng):
    s = mlp_state()
    _, g_online, g_pred = byol_grads(s, rng.normal(size=(2, 4)), rng.normal(size=(2, 4)))
    # the gradient objects cover the online net and the predictor only
    assert [a.shape for a in g_online.arrays()] == [a.shape for a in s.online.arrays()]
    assert [a.shape for a in g_pred.arrays()] == [a.shape for a in s.predictor.arrays()]


def test_ema_update_formula(rng):
    p = nn.init_mlp([2, 3], rng)
    q = nn.init_mlp([2, 3], rng)
    out = ema_update(p, q, 0.9)
    for a, b, c in zip(p.arrays(), q.arrays(), out.arrays()):
        assert np.allclose(c, 0.9 * a + 0.1 * b, rtol=0, atol=1e-15)
    assert ema_update(p, q, 0.0) == q


def test_step_updates_target_after_online(rng):
    s = mlp_state(tau=0.5)
    cfg = AugmentConfig(noise_std=0.1, dropout_prob=0.0)
    new, loss = byol_step(s, rng.normal(size=(8, 4)), cfg, 1e-2, seed=0)
    assert new.step == 1 and np.isfinite(loss)
    want = ema_update(s.target, new.online, 0.5)
    assert all(np.array_equal(a, b) for a, b in zip(want.arrays(), new.target.arrays()))
    assert new.online != s.online


def test_bad_tau():
    s = mlp_state()
    with pytest.raises(ValueError):
        ByolState(s.online, s.target, s.predictor, tau=1.0)


def test_divergence_detected(rng):
    s = mlp_state()
    with pytest.raises(DivergenceError):
        byol_step(s, rng.normal(size=(4, 4)), AugmentConfig(), lr=np.inf, seed=0)


def test_training_lowers_loss(small_train):
    spec = sim.sim_encoder_spec(seed=0, features=4, hidden=(8,))
    _, hist = train_byol(small_train, spec, epochs=6, cfg=sim.SIM_AUGMENT, lr=3e-3, seed=0)
    assert len(hist) == 6
    assert hist[-1] < hist[0]


def test_train_encoder_deterministic(small_train):
    spec = sim.sim_encoder_spec(seed=1, features=2, hidden=(4,))
    a = train_encoder(small_train, spec, epochs=1, cfg=sim.SIM_AUGMENT, seed=2)
    b = train_encoder(small_train, spec, epochs=1, cfg=sim.SIM_AUGMENT, seed=2)
    assert a == b and a.kind == "byol_patch"


def test_warm_start_whitens_first_layer(small_train):
    spec = EncoderSpec("byol_mlp", sim.OBS_DIM, 8, (16,))
    obs = small_train.stacked()[0].astype(np.float64)
    s = init_byol_state(spec, warm_start=obs)
    h = nn.forward(nn.MLPParams(s.online.weights[:1], s.online.biases[:1]), obs)
    assert np.all(np.isfinite(h))
    with pytest.raises(ValueError):
        init_byol_state(sim.sim_encoder_spec(), warm_start=obs)


def test_embed_demoset_provenance(small_train):
    enc = IdentityEncoder(small_train.obs_dim)
    emb = embed_demoset(enc, small_train)
    obs, trans, grip, ids, ts = small_train.stacked()
    assert np.array_equal(emb.rows, obs)
    assert np.array_equal(emb.demo_ids, ids) and np.array_equal(emb.timesteps, ts)
    with pytest.raises(EncoderError):
        embed_demoset(IdentityEncoder(3), small_train)


# --- checkpoints ------------------------------------------------------------

def all_kinds(rng):
    x = rng.normal(size=(40, 6))
    return [
        make_encoder(EncoderSpec("identity", 6, 6)),
        make_encoder(EncoderSpec("random_projection", 6, 3, seed=2)),
        make_encoder(EncoderSpec("whitening", 6, 4), x),
        make_encoder(EncoderSpec("byol_mlp", 6, 3, (5, 4), seed=3)),
        make_encoder(EncoderSpec("byol_patch", 6, 6, (4,), 4, ((0, 5), (1, 2, 3), (4,)))),
    ]


def test_checkpoint_round_trip(rng, tmp_path):
    for enc in all_kinds(rng):
        raw = dumps_encoder(enc)
        back = loads_encoder(raw)
        assert back == enc and dumps_encoder(back) == raw
        save_encoder(enc, tmp_path / "e.venc")
        assert load_encoder(tmp_path / "e.venc") == enc
        x = rng.normal(size=(2, 6))
        assert np.array_equal(back.encode_batch(x), enc.encode_batch(x))


def test_checkpoint_corruption(rng):
    enc = all_kinds(rng)[4]
    raw = dumps_encoder(enc)
    with pytest.raises(EncoderError, match="magic"):
        loads_encoder(b"XXXX" + raw[4:])
    with pytest.raises(EncoderError, match="truncated"):
        loads_encoder(raw[:-3])
    with pytest.raises(EncoderError, match="trailing"):
        loads_encoder(raw + b"\0\0\0\0")
    for cut in range(0, 40):
        with pytest.raises(EncoderError):
            loads_encoder(raw[:cut])
