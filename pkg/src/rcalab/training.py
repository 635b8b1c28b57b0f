"""Episode-based meta-training and fine-tuning.

One gradient step consumes the n_q scenarios of a single sampled model;
the loss is the mean masked cross-entropy over those scenarios. AdamW
with decoupled weight decay; no schedule for base training, optional
linear warmup for fine-tuning. Decoder-only mode touches nothing outside
the decoder head, bit for bit.
"""

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .episodes import Episode
from .model import ModelConfig, ParameterStore, forward, valid_mask
from .prior import PriorConfig, sample_scenario_batch
from .rng import substream

DECODER_PREFIX = "dec."


@dataclass
class TrainConfig:
    lr: float = 5e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    episodes_per_epoch: int = 1000
    epochs: int = 1
    n_q: int = 4
    seed: int = 0
    finetune_mode: str = "none"      # none | full | decoder_only
    warmup_frac: float = 0.0         # fraction of total steps, fine-tune style
    grad_clip: float = None          # global-norm cap; off by default
    alarm_penalty: float = 0.0       # factory fine-tuning only
    workers: int = 0                 # parallel episode generation
    unique_episodes: int = None      # revisit a fixed pool across epochs

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.n_q < 1:
            raise ValueError("n_q must be at least 1")
        if self.finetune_mode not in ("none", "full", "decoder_only"):
            raise ValueError(f"unknown finetune mode {self.finetune_mode!r}")


class AdamW:
    """Adam moments plus decoupled weight decay (never enters the moments)."""

    def __init__(self, store: ParameterStore, config: TrainConfig,
                 trainable_prefix: str = ""):
        self.store = store
        self.cfg = config
        self.names = [n for n in store.names() if n.startswith(trainable_prefix)]
        self.m = {n: np.zeros_like(store[n].data) for n in self.names}
        self.v = {n: np.zeros_like(store[n].data) for n in self.names}
        self.t = 0

    def step(self, lr: float = None) -> None:
        cfg = self.cfg
        lr = cfg.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name in self.names:
            p = self.store[name]
            g = p.grad if p.grad is not None else 0.0
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * np.square(g)
            update = (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + cfg.eps)
            p.data -= lr * cfg.weight_decay * p.data   # decoupled decay
            p.data -= (lr * update).astype(p.data.dtype)


def scenario_loss(episode: Episode, store: ParameterStore,
                  train_rng=None, alarm_penalty: float = 0.0):
    """Masked cross-entropy, averaged over targets for multi-cause episodes,
    plus an optional softplus penalty on the alarm-node logits."""
    logits = forward(episode, store, train_rng=train_rng)
    valid = valid_mask(episode, store.cfg.k_max)
    terms = [T.softmax_cross_entropy(logits, t, valid) for t in episode.targets]
    loss = terms[0]
    for extra in terms[1:]:
        loss = T.add(loss, extra)
    loss = T.mul(loss, 1.0 / len(terms))
    if alarm_penalty > 0.0:
        alarms = [int(i) for i in np.flatnonzero(episode.mask)]
        pen = T.softplus(T.pick(logits, alarms[0]))
        for a in alarms[1:]:
            pen = T.add(pen, T.softplus(T.pick(logits, a)))
        loss = T.add(loss, T.mul(pen, alarm_penalty / len(alarms)))
    return loss


def grad_global_norm(store: ParameterStore) -> float:
    total = 0.0
    for name in store.names():
        g = store[name].grad
        if g is not None:
            total += float(np.square(g).sum())
    return math.sqrt(total)


def train_step(store: ParameterStore, optimizer: AdamW, episode_batch,
               config: TrainConfig, step_rng=None, lr: float = None) -> float:
    """One optimizer update from a batch of scenarios sharing one model."""
    store.zero_grads()
    losses = []
    for episode in episode_batch:
        drop_rng = step_rng if store.cfg.dropout > 0 else None
        loss = scenario_loss(episode, store, train_rng=drop_rng,
                             alarm_penalty=config.alarm_penalty)
        losses.append(loss)
    total = losses[0]
    for extra in losses[1:]:
        total = T.add(total, extra)
    total = T.mul(total, 1.0 / len(losses))
    value = total.item()
    if not math.isfinite(value):
        seeds = sorted({ep.seed for ep in episode_batch})
        raise FloatingPointError(
            f"non-finite loss {value} on episode seeds {seeds}")
    total.backward()
    if config.grad_clip is not None:
        norm = grad_global_norm(store)
        if norm > config.grad_clip:
            scale = config.grad_clip / norm
            for name in store.names():
                if store[name].grad is not None:
                    store[name].grad *= scale
    optimizer.step(lr=lr)
    return value


def _lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    if config.warmup_frac <= 0.0:
        return config.lr
    warmup = max(1, int(config.warmup_frac * total_steps))
    if step < warmup:
        return config.lr * (step + 1) / warmup
    return config.lr


def _write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "loss"])
        writer.writerows(history)


class _BatchJob:
    """Picklable episode-batch generator, seeded by global step index only."""

    def __init__(self, prior_config, seed):
        self.prior_config = prior_config
        self.seed = seed

    def __call__(self, idx):
        return sample_scenario_batch(substream(self.seed, "episode", idx),
                                     self.prior_config, seed=idx)


def _generate_batches(prior_config: PriorConfig, seed: int, first: int, count: int,
                      workers: int, unique: int = None):
    """Episode batches for step indices [first, first+count); identical
    output with or without worker processes. With `unique` set, indices
    wrap so later epochs revisit the same episode pool."""
    job = _BatchJob(prior_config, seed)
    indices = [i % unique if unique else i for i in range(first, first + count)]
    if workers and workers > 1:
        import multiprocessing as mp

        with mp.Pool(workers) as pool:
            yield from pool.imap(job, indices, chunksize=8)
    else:
        for idx in indices:
            yield job(idx)


def train(prior_config: PriorConfig, train_config: TrainConfig,
          model_config: ModelConfig, out_dir=None, store: ParameterStore = None,
          log_every: int = 0):
    """Meta-train from scratch (or continue from `store`).

    Returns (store, history) with history rows (step, epoch, loss). When
    out_dir is given, writes one checkpoint per epoch plus loss.csv.
    """
    import pathlib

    prior_config = replace(prior_config, n_q=train_config.n_q)
    if store is None:
        store = ParameterStore.initialize(model_config,
                                          substream(train_config.seed, "init"))
    trainable = DECODER_PREFIX if train_config.finetune_mode == "decoder_only" else ""
    optimizer = AdamW(store, train_config, trainable_prefix=trainable)
    history = []
    out = pathlib.Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    step = 0
    total_steps = train_config.epochs * train_config.episodes_per_epoch
    for epoch in range(train_config.epochs):
        batches = _generate_batches(prior_config, train_config.seed,
                                    first=epoch * train_config.episodes_per_epoch,
                                    count=train_config.episodes_per_epoch,
                                    workers=train_config.workers,
                                    unique=train_config.unique_episodes)
        for batch in batches:
            lr = _lr_at(step, total_steps, train_config)
            loss = train_step(store, optimizer, batch, train_config,
                              step_rng=substream(train_config.seed, "dropout", step),
                              lr=lr)
            history.append((step, epoch, loss))
            step += 1
            if log_every and step % log_every == 0:
                recent = np.mean([h[2] for h in history[-log_every:]])
                print(f"step {step}/{total_steps} loss {recent:.4f}", flush=True)
        if out:
            store.save(out / f"checkpoint_epoch{epoch}.rckp")
    if out:
        store.save(out / "checkpoint.rckp")
        _write_history(out / "loss.csv", history)
    return store, history


def finetune(store: ParameterStore, episode_batches, train_config: TrainConfig,
             out_dir=None):
    """Adapt an existing checkpoint on explicit episode batches.

    `episode_batches` is a sequence of scenario lists; multi-target
    batches are handled by the per-target loss average. Mode `full`
    updates everything, `decoder_only` freezes the backbone.
    """
    import pathlib

    if train_config.finetune_mode == "none":
        raise ValueError("finetune requires mode 'full' or 'decoder_only'")
    for batch in episode_batches:
        for ep in batch:
            if ep.k_max != store.cfg.k_max:
                raise ValueError(
                    f"episode padded to {ep.k_max} nodes, checkpoint expects "
                    f"{store.cfg.k_max}")
    trainable = DECODER_PREFIX if train_config.finetune_mode == "decoder_only" else ""
    optimizer = AdamW(store, train_config, trainable_prefix=trainable)
    history = []
    total = train_config.epochs * len(episode_batches)
    step = 0
    for epoch in range(train_config.epochs):
        for batch in episode_batches:
            lr = _lr_at(step, total, train_config)
            loss = train_step(store, optimizer, batch, train_config,
                              step_rng=substream(train_config.seed, "ft-dropout", step),
                              lr=lr)
            history.append((step, epoch, loss))
            step += 1
    if out_dir:
        out = pathlib.Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        store.save(out / "checkpoint.rckp")
        _write_history(out / "loss.csv", history)
    return store, history
