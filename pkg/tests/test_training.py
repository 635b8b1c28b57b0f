import math

import numpy as np
import pytest

from rcalab.episodes import make_episode
from rcalab.model import ModelConfig, ParameterStore, forward, valid_mask
from rcalab.prior import desk_prior, multi_rca_prior, sample_scenario_batch
from rcalab.rng import substream
from rcalab.training import (
    AdamW,
    TrainConfig,
    finetune,
    scenario_loss,
    train,
    train_step,
)
from rcalab import tensor as T


def tiny_model(**kw):
    base = dict(d=16, n_blocks=1, heads=2, mlp_hidden=32, k_max=4, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def make_batch(seed=0, n_q=3, k_real=4, k_max=4, targets=(1,)):
    rng = substream(seed, "batch")
    batch = []
    for _ in range(n_q):
        obs = rng.normal(size=(20, k_real))
        intv = rng.normal(size=(8, k_real))
        intv[:, targets[0]] += 3.0
        batch.append(make_episode(obs, intv, list(targets), targets[0], k_max))
    return batch


def test_initial_loss_is_log_k():
    """A fresh model's two identical streams give the uniform posterior."""
    cfg = tiny_model(k_max=5)
    store = ParameterStore.initialize(cfg, substream(0, "init"))
    rng = substream(1, "ep")
    obs = rng.normal(size=(30, 5))
    ep = make_episode(obs, obs.copy(), [2], 2, 5)
    ep.mask[:] = False
    loss = scenario_loss(ep, store)
    assert loss.item() == pytest.approx(math.log(5), abs=1e-9)


def test_overfit_single_batch_halves_loss():
    cfg = tiny_model()
    store = ParameterStore.initialize(cfg, substream(2, "init"))
    tc = TrainConfig(lr=5e-3, n_q=3, seed=0)
    opt = AdamW(store, tc)
    batch = make_batch()
    first = train_step(store, opt, batch, tc)
    last = first
    for _ in range(99):
        last = train_step(store, opt, batch, tc)
    assert last <= 0.5 * first


def test_decoder_only_leaves_backbone_bit_identical():
    cfg = tiny_model()
    store = ParameterStore.initialize(cfg, substream(3, "init"))
    backbone_before = store.checksum(prefix="block")
    encoder_before = store.checksum(prefix="enc")
    decoder_before = store.checksum(prefix="dec.")
    tc = TrainConfig(lr=1e-3, n_q=2, seed=0, finetune_mode="decoder_only")
    opt = AdamW(store, tc, trainable_prefix="dec.")
    batch = make_batch(seed=1, n_q=2)
    for _ in range(5):
        train_step(store, opt, batch, tc)
    assert store.checksum(prefix="block") == backbone_before
    assert store.checksum(prefix="enc") == encoder_before
    assert store.checksum(prefix="dec.") != decoder_before


def test_weight_decay_decoupled_exact_shrinkage():
    """Zero gradient: the value must shrink by exactly lr*wd per step."""
    cfg = tiny_model()
    store = ParameterStore.initialize(cfg, substream(4, "init"))
    tc = TrainConfig(lr=0.01, weight_decay=0.1)
    opt = AdamW(store, tc)
    name = "enc_w"
    before = store[name].data.copy()
    store.zero_grads()  # all grads None -> treated as zero
    opt.step()
    np.testing.assert_allclose(store[name].data, before * (1.0 - 0.01 * 0.1),
                               rtol=1e-12)


def test_batch_loss_is_mean_of_scenario_losses():
    cfg = tiny_model()
    store = ParameterStore.initialize(cfg, substream(5, "init"))
    tc = TrainConfig(lr=1e-9, n_q=3, seed=0)  # negligible update
    batch = make_batch(seed=2)
    individual = [scenario_loss(ep, store).item() for ep in batch]
    opt = AdamW(store, tc)
    batch_loss = train_step(store, opt, batch, tc)
    assert batch_loss == pytest.approx(np.mean(individual), abs=1e-9)


def test_non_finite_loss_aborts_with_seed():
    cfg = tiny_model()
    store = ParameterStore.initialize(cfg, substream(6, "init"))
    store["dec.b2"].data[:] = np.inf
    batch = make_batch(seed=3, n_q=1)
    for ep in batch:
        ep.seed = 1234
    tc = TrainConfig(n_q=1, seed=0)
    opt = AdamW(store, tc)
    with pytest.raises(FloatingPointError, match="1234"):
        train_step(store, opt, batch, tc)


def test_train_deterministic_replay():
    prior = desk_prior(pad_to=4)
    mc = tiny_model(dropout=0.1, dtype="float64")
    tc = TrainConfig(lr=1e-3, episodes_per_epoch=6, epochs=1, n_q=2, seed=11)
    _, hist_a = train(prior, tc, mc)
    _, hist_b = train(prior, tc, mc)
    assert hist_a == hist_b


def test_train_checkpoint_reproduces_next_loss(tmp_path):
    prior = desk_prior(pad_to=4)
    mc = tiny_model(dtype="float32")
    tc = TrainConfig(lr=1e-3, episodes_per_epoch=4, epochs=2, n_q=2, seed=7)
    store, hist = train(prior, tc, mc, out_dir=tmp_path)
    assert (tmp_path / "checkpoint_epoch0.rckp").exists()
    assert (tmp_path / "loss.csv").exists()
    lines = (tmp_path / "loss.csv").read_text().strip().splitlines()
    assert lines[0] == "step,epoch,loss"
    assert len(lines) == 1 + 8

    # reload the epoch-0 checkpoint and check the first epoch-1 batch loss
    loaded = ParameterStore.load(tmp_path / "checkpoint_epoch0.rckp")
    batch = sample_scenario_batch(substream(7, "episode", 4),
                                  __import__("dataclasses").replace(prior, n_q=2),
                                  seed=4)
    losses = [scenario_loss(ep, loaded).item() for ep in batch]
    assert np.mean(losses) == pytest.approx(hist[4][2], abs=1e-5)


def test_finetune_multi_target_loss_reduces_to_single():
    cfg = tiny_model()
    store = ParameterStore.initialize(cfg, substream(8, "init"))
    rng = substream(9, "ep")
    obs = rng.normal(size=(25, 4))
    intv = rng.normal(size=(10, 4))
    single = make_episode(obs, intv, [2], 2, 4)
    loss_single = scenario_loss(single, store).item()
    assert scenario_loss(single, store, alarm_penalty=0.0).item() == pytest.approx(loss_single)


def test_alarm_penalty_value():
    cfg = tiny_model()
    store = ParameterStore.initialize(cfg, substream(10, "init"))
    rng = substream(11, "ep")
    obs = rng.normal(size=(25, 4))
    ep = make_episode(obs, rng.normal(size=(6, 4)), [1], 3, 4)
    base = scenario_loss(ep, store).item()
    with_pen = scenario_loss(ep, store, alarm_penalty=0.4).item()
    logits = forward(ep, store).data
    expected = base + 0.4 * math.log1p(math.exp(logits[3]))
    assert with_pen == pytest.approx(expected, rel=1e-9)
    # a deeply negative alarm logit contributes essentially nothing
    assert math.log1p(math.exp(-20.0)) == pytest.approx(0.0, abs=1e-8)


def test_finetune_rejects_k_mismatch():
    cfg = tiny_model(k_max=4)
    store = ParameterStore.initialize(cfg, substream(12, "init"))
    rng = substream(13, "ep")
    ep = make_episode(rng.normal(size=(10, 3)), rng.normal(size=(4, 3)), [0], 0, 6)
    tc = TrainConfig(finetune_mode="full", seed=0)
    with pytest.raises(ValueError):
        finetune(store, [[ep]], tc)


def test_finetune_mode_validation():
    with pytest.raises(ValueError):
        TrainConfig(finetune_mode="nonsense")
    cfg = tiny_model()
    store = ParameterStore.initialize(cfg, substream(14, "init"))
    with pytest.raises(ValueError):
        finetune(store, [], TrainConfig(finetune_mode="none"))


def test_warmup_schedule():
    from rcalab.training import _lr_at
    tc = TrainConfig(lr=1.0, warmup_frac=0.1)
    assert _lr_at(0, 100, tc) == pytest.approx(0.1)
    assert _lr_at(9, 100, tc) == pytest.approx(1.0)
    assert _lr_at(50, 100, tc) == 1.0
    flat = TrainConfig(lr=0.5)
    assert _lr_at(0, 100, flat) == 0.5


def test_worker_generation_matches_inline():
    from rcalab.training import _generate_batches
    prior = desk_prior(pad_to=4)
    inline = [b for b in _generate_batches(prior, seed=3, first=0, count=6, workers=0)]
    pooled = [b for b in _generate_batches(prior, seed=3, first=0, count=6, workers=2)]
    for a, b in zip(inline, pooled):
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.obs, y.obs)
            np.testing.assert_array_equal(x.int_, y.int_)
            assert x.targets == y.targets
