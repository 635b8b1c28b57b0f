import numpy as np
import pytest

from rcalab import tensor as T
from rcalab.episodes import make_episode
from rcalab.model import (
    ModelConfig,
    ParameterStore,
    encode,
    forward,
    mace_block,
    parameter_count,
    parameter_shapes,
    predict_proba,
    predict_ranking,
    valid_mask,
)
from rcalab.rng import substream

from gradcheck import assert_close, numerical_grad


def tiny_cfg(**kw):
    base = dict(d=8, n_blocks=1, heads=2, mlp_hidden=16, k_max=4, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def make_ep(rng, k_real=3, k_max=4, n_obs=6, n_int=3, target=0, symptom=None):
    obs = rng.normal(size=(n_obs, k_real))
    intv = rng.normal(size=(n_int, k_real)) + 1.0
    return make_episode(obs, intv, [target], symptom if symptom is not None else target,
                        k_max)


def fresh_store(cfg, seed=0):
    return ParameterStore.initialize(cfg, substream(seed, "init"))


def test_encode_zero_input_zero_embeddings_gives_zero():
    cfg = tiny_cfg()
    store = fresh_store(cfg)
    store["enc_node"].data[:] = 0.0
    ep = make_ep(substream(1, "ep"))
    ep.obs[:] = 0.0
    ep.mask[:] = False
    h_obs, _ = encode(ep, store)
    np.testing.assert_array_equal(h_obs.data, 0.0)


def test_encode_target_embedding_localised_to_masked_column():
    cfg = tiny_cfg()
    store = fresh_store(cfg)
    ep = make_ep(substream(2, "ep"), symptom=1)
    h_obs, h_int = encode(ep, store)
    base = ep.int_[:, :, None] * store["enc_w"].data + store["enc_node"].data
    diff = h_int.data - base
    np.testing.assert_allclose(
        diff[:, 1, :], np.broadcast_to(store["target_embed"].data, (ep.n_int, cfg.d)),
        atol=1e-12)
    np.testing.assert_allclose(diff[:, 0, :], 0.0, atol=1e-12)
    np.testing.assert_allclose(diff[:, 2, :], 0.0, atol=1e-12)


def test_encode_padded_column_exactly_zero():
    cfg = tiny_cfg()
    store = fresh_store(cfg)
    ep = make_ep(substream(3, "ep"), k_real=3, k_max=4)
    h_obs, h_int = encode(ep, store)
    np.testing.assert_array_equal(h_obs.data[:, 3, :], 0.0)
    np.testing.assert_array_equal(h_int.data[:, 3, :], 0.0)


def test_block_identical_streams_stay_identical():
    """Same data in both regimes and no symptom bit: the streams must agree."""
    cfg = tiny_cfg()
    store = fresh_store(cfg)
    rng = substream(4, "ep")
    obs = rng.normal(size=(5, 3))
    ep = make_episode(obs, obs.copy(), [0], 0, cfg.k_max)
    ep.mask[:] = False
    h_obs, h_int = encode(ep, store)
    np.testing.assert_array_equal(h_obs.data, h_int.data)
    o, i = mace_block(h_obs, h_int, ep.k_real, store, 0)
    np.testing.assert_allclose(o.data, i.data, atol=1e-12)


def test_block_pad_attention_weight_exactly_zero():
    cfg = tiny_cfg()
    store = fresh_store(cfg)
    ep = make_ep(substream(5, "ep"), k_real=3, k_max=4)
    keep = np.zeros((ep.n_obs, cfg.k_max), dtype=bool)
    keep[:, : ep.k_real] = True
    h_obs, _ = encode(ep, store)
    q = T.matmul(h_obs, store["block0.att_node.wq"])
    k = T.matmul(h_obs, store["block0.att_node.wk"])
    v = T.matmul(h_obs, store["block0.att_node.wv"])
    _, w = T.attention(q, k, v, key_mask=keep, heads=cfg.heads, return_weights=True)
    assert np.all(w.data[:, :, :, 3] == 0.0)


def test_block_single_obs_sample_softmax_over_one_key():
    cfg = tiny_cfg()
    store = fresh_store(cfg)
    ep = make_ep(substream(6, "ep"), n_obs=1)
    h_obs, _ = encode(ep, store)
    xo = T.transpose(h_obs, (1, 0, 2))
    q = T.add(T.matmul(xo, store["block0.att_sample.wq"]), store["block0.att_sample.bq"])
    k = T.add(T.matmul(xo, store["block0.att_sample.wk"]), store["block0.att_sample.bk"])
    v = T.add(T.matmul(xo, store["block0.att_sample.wv"]), store["block0.att_sample.bv"])
    att = T.attention(q, k, v, heads=cfg.heads)
    np.testing.assert_allclose(att.data, v.data, atol=1e-12)


def test_forward_identical_data_uniform_posterior():
    cfg = tiny_cfg(n_blocks=2)
    store = fresh_store(cfg)
    rng = substream(7, "ep")
    obs = rng.normal(size=(8, 3))
    ep = make_episode(obs, obs.copy(), [0], 0, cfg.k_max)
    ep.mask[:] = False
    probs = predict_proba(ep, store)
    np.testing.assert_allclose(probs[:3], 1.0 / 3.0, atol=1e-9)
    assert probs[3] == 0.0


def test_forward_padded_probability_exactly_zero():
    cfg = tiny_cfg()
    store = fresh_store(cfg)
    ep = make_ep(substream(8, "ep"))
    probs = predict_proba(ep, store)
    assert probs[3] == 0.0
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_forward_k_mismatch_is_error():
    cfg = tiny_cfg()
    store = fresh_store(cfg)
    ep = make_ep(substream(9, "ep"), k_real=3, k_max=6)
    with pytest.raises(ValueError):
        forward(ep, store)


def test_garbage_in_padding_invariance():
    """Arbitrary values in padded input columns must not move real logits."""
    cfg = tiny_cfg(n_blocks=2)
    store = fresh_store(cfg)
    ep = make_ep(substream(10, "ep"), k_real=3, k_max=4)
    clean = forward(ep, store).data.copy()
    ep.obs[:, 3] = 1e6
    ep.int_[:, 3] = -777.0
    dirty = forward(ep, store).data
    assert np.max(np.abs(clean[:3] - dirty[:3])) < 1e-6


def test_sample_order_invariance():
    cfg = tiny_cfg(n_blocks=2)
    store = fresh_store(cfg)
    rng = substream(11, "ep")
    ep = make_ep(rng, n_obs=7, n_int=4)
    base = forward(ep, store).data.copy()
    perm_obs = rng.permutation(ep.n_obs)
    perm_int = rng.permutation(ep.n_int)
    ep.obs = ep.obs[perm_obs]
    ep.int_ = ep.int_[perm_int]
    shuffled = forward(ep, store).data
    np.testing.assert_allclose(base, shuffled, atol=1e-9)


def test_full_gradcheck_small_mace():
    """Every parameter's gradient vs central differences, 64-bit."""
    cfg = tiny_cfg()
    store = fresh_store(cfg)
    ep = make_ep(substream(12, "ep"), n_obs=6, n_int=3, target=1, symptom=2)

    def loss_fn():
        logits = forward(ep, store)
        return T.softmax_cross_entropy(logits, 1, valid_mask(ep, cfg.k_max))

    loss = loss_fn()
    loss.backward()
    analytic = {n: store[n].grad.copy() if store[n].grad is not None else np.zeros(store[n].shape)
                for n in store.names()}
    for name in store.names():
        num = numerical_grad(lambda: loss_fn().item(), [store[name].data], h=1e-5)[0]
        assert_close(analytic[name], num, rtol=1e-4, atol=1e-7, label=name)


def test_dropout_seeded_reproducible():
    cfg = tiny_cfg(dropout=0.2)
    store = fresh_store(cfg)
    ep = make_ep(substream(13, "ep"))
    a = forward(ep, store, train_rng=np.random.default_rng(5)).data
    b = forward(ep, store, train_rng=np.random.default_rng(5)).data
    c = forward(ep, store, train_rng=np.random.default_rng(6)).data
    np.testing.assert_array_equal(a, b)
    assert np.any(a != c)
    # inference path ignores dropout entirely
    d = forward(ep, store).data
    e = forward(ep, store).data
    np.testing.assert_array_equal(d, e)


def test_predict_ranking_tiebreak_and_mask():
    rr = predict_ranking(np.array([2.0, 1.0, 0.0]), k_real=3)
    assert rr.order == [0, 1, 2]
    rr = predict_ranking(np.zeros(4), k_real=4)
    assert rr.order == [0, 1, 2, 3]
    rr = predict_ranking(np.array([0.1, 0.9, 0.5, 0.7]), k_real=2)
    assert set(rr.order) == {0, 1}
    assert rr.order[0] == 1


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = tiny_cfg(dtype="float32")
    store = fresh_store(cfg)
    p1 = tmp_path / "a.rckp"
    p2 = tmp_path / "b.rckp"
    store.save(p1)
    loaded = ParameterStore.load(p1)
    loaded.save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    for name in store.names():
        np.testing.assert_array_equal(store[name].data, loaded[name].data)


def test_checkpoint_rejects_wrong_magic_and_shape(tmp_path):
    bad = tmp_path / "bad.rckp"
    bad.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError):
        ParameterStore.load(bad)

    cfg = tiny_cfg()
    store = fresh_store(cfg)
    good = tmp_path / "good.rckp"
    store.save(good)
    data = bytearray(good.read_bytes())
    # corrupt the config header's k_max so shapes no longer match
    idx = data.find(b'"k_max": 4')
    data[idx: idx + len(b'"k_max": 4')] = b'"k_max": 9'
    (tmp_path / "mismatch.rckp").write_bytes(bytes(data))
    with pytest.raises(ValueError):
        ParameterStore.load(tmp_path / "mismatch.rckp")


def test_parameter_count_matches_shape_table():
    cfg = tiny_cfg()
    store = fresh_store(cfg)
    assert store.count() == parameter_count(cfg)
    total = 0
    for name, shape in parameter_shapes(cfg).items():
        assert store[name].shape == tuple(shape), name
        total += int(np.prod(shape))
    assert total == store.count()


def test_int_self_attention_flag_changes_output():
    cfg = tiny_cfg()
    store = fresh_store(cfg)
    ep = make_ep(substream(14, "ep"))
    base = forward(ep, store).data.copy()
    store_incl = ParameterStore(ModelConfig(**{**cfg.to_dict(), "int_self_attention": True}),
                                store.params)
    incl = forward(ep, store_incl).data
    assert np.any(np.abs(base - incl) > 1e-9)


def test_softmax_over_real_nodes_sums_to_one():
    cfg = tiny_cfg(n_blocks=2)
    store = fresh_store(cfg)
    for seed in range(5):
        ep = make_ep(substream(seed, "sum"), k_real=2 + seed % 3, k_max=4)
        probs = predict_proba(ep, store)
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(probs[ep.k_real:] == 0.0)
