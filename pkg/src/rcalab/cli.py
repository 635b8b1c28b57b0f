"""Command-line entry point for batch workflows.

Subcommands: generate, train, finetune, evaluate, infer, oracle,
bench-latency. Configuration precedence is flags > config file >
defaults; all randomness flows from --seed through named substreams, and
every run ends by atomically writing a manifest sufficient to replay it.
"""

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .episodes import read_corpus, write_corpus
from .evaluation import (
    METHODS,
    TOPOLOGIES,
    ScenarioConfig,
    latency_benchmark,
    run_scenario,
    write_latency_csv,
)
from .factory import FactoryConfig, sample_factory_scenario
from .model import ModelConfig, ParameterStore, predict_proba, predict_ranking
from .oracle import enumerate_posterior, load_bcm, symmetric_two_node_bcm
from .prior import desk_prior, multi_rca_prior, sample_episode, training_prior
from .rng import substream
from .training import TrainConfig, finetune, train

PRIOR_PRESETS = ("train", "desk", "multi-rca", "factory")


def _write_manifest(out_dir, command, args_dict, seed, outputs, started):
    manifest = {
        "command": command,
        "config": {k: v for k, v in sorted(args_dict.items()) if v is not None},
        "seed": seed,
        "version": __version__,
        "outputs": [str(p) for p in outputs],
        "wall_time_s": round(time.time() - started, 3),
        "started_unix": round(started, 3),
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "manifest.json")
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".manifest")
    with os.fdopen(fd, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def _merge_config(args, defaults):
    """flags > config file > defaults; unset flags arrive as None."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ValueError(f"config file has unknown keys {sorted(unknown)}")
        merged.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _int_list(text):
    return tuple(int(x) for x in str(text).split(",") if x != "")


def _prior_from_preset(name, pad_to):
    if name == "train":
        return training_prior(pad_to=pad_to)
    if name == "desk":
        return desk_prior(pad_to=pad_to)
    if name == "multi-rca":
        return multi_rca_prior(pad_to=pad_to)
    raise ValueError(f"unknown prior preset {name!r}")


def _model_hash(path):
    if not path:
        return "none"
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:8]


# ------------------------------------------------------------------ commands


def _cmd_generate(args):
    defaults = {"prior": "desk", "episodes": 100, "seed": 0, "pad_to": 5,
                "out": "episodes.jsonl"}
    cfg = _merge_config(args, defaults)
    started = time.time()
    n = int(cfg["episodes"])
    seed = int(cfg["seed"])
    pad_to = int(cfg["pad_to"])
    if cfg["prior"] == "factory":
        fc = FactoryConfig(pad_to=pad_to)
        eps = [sample_factory_scenario(substream(seed, "episode", i), fc, seed=i)
               for i in range(n)]
    else:
        prior = _prior_from_preset(cfg["prior"], pad_to)
        eps = [sample_episode(substream(seed, "episode", i), prior, seed=i)
               for i in range(n)]
    for ep in eps:
        ep.validate()
    write_corpus(cfg["out"], eps, k_max=pad_to,
                 meta={"prior": cfg["prior"], "seed": seed})
    out_dir = os.path.dirname(os.path.abspath(cfg["out"]))
    _write_manifest(out_dir, "generate", cfg, seed, [cfg["out"]], started)
    print(f"wrote {n} episodes to {cfg['out']}")
    return 0


def _model_config_from(cfg):
    return ModelConfig(
        d=int(cfg["d"]), n_blocks=int(cfg["blocks"]), heads=int(cfg["heads"]),
        mlp_hidden=int(cfg["mlp_hidden"]), dropout=float(cfg["dropout"]),
        k_max=int(cfg["pad_to"]), dtype=cfg["dtype"],
    )


def _cmd_train(args):
    defaults = {"prior": "desk", "pad_to": 5, "d": 32, "blocks": 2, "heads": 4,
                "mlp_hidden": 128, "dropout": 0.1, "dtype": "float32",
                "lr": 1e-3, "weight_decay": 0.01, "episodes_per_epoch": 1000,
                "epochs": 1, "n_q": 4, "seed": 0, "workers": 0,
                "log_every": 200, "out": "runs/train"}
    cfg = _merge_config(args, defaults)
    started = time.time()
    prior = _prior_from_preset(cfg["prior"], int(cfg["pad_to"]))
    tc = TrainConfig(lr=float(cfg["lr"]), weight_decay=float(cfg["weight_decay"]),
                     episodes_per_epoch=int(cfg["episodes_per_epoch"]),
                     epochs=int(cfg["epochs"]), n_q=int(cfg["n_q"]),
                     seed=int(cfg["seed"]), workers=int(cfg["workers"]))
    mc = _model_config_from(cfg)
    store, history = train(prior, tc, mc, out_dir=cfg["out"],
                           log_every=int(cfg["log_every"]))
    outputs = [os.path.join(cfg["out"], "checkpoint.rckp"),
               os.path.join(cfg["out"], "loss.csv")]
    _write_manifest(cfg["out"], "train", cfg, tc.seed, outputs, started)
    print(f"final loss {history[-1][2]:.4f} after {len(history)} steps; "
          f"checkpoint at {outputs[0]}")
    return 0


def _cmd_finetune(args):
    defaults = {"checkpoint": None, "episodes": None, "mode": "full",
                "lr": 5e-5, "weight_decay": 0.01, "epochs": 1, "n_q": 4,
                "alarm_penalty": 0.0, "warmup_frac": 0.0, "seed": 0,
                "out": "runs/finetune"}
    cfg = _merge_config(args, defaults)
    if not cfg["checkpoint"] or not cfg["episodes"]:
        raise ValueError("finetune requires --checkpoint and --episodes")
    started = time.time()
    store = ParameterStore.load(cfg["checkpoint"])
    _, episodes = read_corpus(cfg["episodes"])
    n_q = int(cfg["n_q"])
    batches = [episodes[i: i + n_q] for i in range(0, len(episodes), n_q)]
    tc = TrainConfig(lr=float(cfg["lr"]), weight_decay=float(cfg["weight_decay"]),
                     epochs=int(cfg["epochs"]), n_q=n_q, seed=int(cfg["seed"]),
                     finetune_mode=cfg["mode"],
                     warmup_frac=float(cfg["warmup_frac"]),
                     alarm_penalty=float(cfg["alarm_penalty"]))
    store, history = finetune(store, batches, tc, out_dir=cfg["out"])
    outputs = [os.path.join(cfg["out"], "checkpoint.rckp"),
               os.path.join(cfg["out"], "loss.csv")]
    _write_manifest(cfg["out"], "finetune", cfg, tc.seed, outputs, started)
    print(f"fine-tuned {len(history)} steps; checkpoint at {outputs[0]}")
    return 0


def _cmd_evaluate(args):
    defaults = {"scenario": "mediator", "methods": "traversal,circa,corr,eps",
                "model": None, "mechanism": "linear", "trials": 200,
                "n_obs": "100", "n_int": "10", "k_grid": "5", "pad_to": None,
                "seed": 0, "out": "runs/evaluate"}
    cfg = _merge_config(args, defaults)
    started = time.time()
    store = ParameterStore.load(cfg["model"]) if cfg["model"] else None
    pad_to = int(cfg["pad_to"]) if cfg["pad_to"] is not None else (
        store.cfg.k_max if store else max(_int_list(cfg["k_grid"])))
    methods = [m for m in str(cfg["methods"]).split(",") if m]
    sc = ScenarioConfig(
        topology=cfg["scenario"], mechanism=cfg["mechanism"],
        n_obs_grid=_int_list(cfg["n_obs"]), n_int_grid=_int_list(cfg["n_int"]),
        trials=int(cfg["trials"]), seed=int(cfg["seed"]), pad_to=pad_to,
        k_grid=_int_list(cfg["k_grid"]),
    )
    table = run_scenario(sc, methods, store=store)
    os.makedirs(cfg["out"], exist_ok=True)
    stem = f"metrics_{sc.topology}_seed{sc.seed}_{_model_hash(cfg['model'])}"
    csv_path = os.path.join(cfg["out"], stem + ".csv")
    json_path = os.path.join(cfg["out"], stem + ".json")
    table.to_csv(csv_path)
    table.to_json(json_path)
    _write_manifest(cfg["out"], "evaluate", cfg, sc.seed,
                    [csv_path, json_path], started)
    for row in table.rows:
        print(f"{row['method']:>10} {row['metric']:>9} n_obs={row['n_obs']} "
              f"n_int={row['n_int']} mean={row['mean']:.3f} "
              f"[{row['ci_low']:.3f}, {row['ci_high']:.3f}]")
    return 0


def _cmd_infer(args):
    defaults = {"model": None, "episodes": None, "out": "rankings.json"}
    cfg = _merge_config(args, defaults)
    if not cfg["model"] or not cfg["episodes"]:
        raise ValueError("infer requires --model and --episodes")
    started = time.time()
    store = ParameterStore.load(cfg["model"])
    _, episodes = read_corpus(cfg["episodes"])
    results = []
    for i, ep in enumerate(episodes):
        probs = predict_proba(ep, store)
        ranking = predict_ranking(probs, ep.k_real)
        results.append({
            "episode": i,
            "k_real": ep.k_real,
            "ranking": [{"node": int(node), "probability": float(probs[node]),
                         "rank": r} for r, node in enumerate(ranking.order)],
        })
    with open(cfg["out"], "w") as fh:
        json.dump(results, fh, indent=2)
    out_dir = os.path.dirname(os.path.abspath(cfg["out"]))
    _write_manifest(out_dir, "infer", cfg, 0, [cfg["out"]], started)
    print(f"ranked {len(results)} episodes -> {cfg['out']}")
    return 0


def _cmd_oracle(args):
    defaults = {"bcm": None, "demo": None, "obs": None, "int": None,
                "symptoms": "0", "n_obs": 200, "n_int": 200, "seed": 0,
                "out": "posterior.json"}
    cfg = _merge_config(args, defaults)
    started = time.time()
    if cfg["demo"]:
        if cfg["demo"] != "symmetric-two-node":
            raise ValueError(f"unknown demo {cfg['demo']!r}")
        bcm = symmetric_two_node_bcm()
        from .oracle import sample_from_tables
        from .prior import Dag

        rng = substream(int(cfg["seed"]), "oracle-demo")
        dag = Dag(k=2, parents=((), (0,)))
        obs_tables = [np.array([[0.5, 0.5]]), np.array([[0.8, 0.2], [0.2, 0.8]])]
        int_tables = [np.array([[0.05, 0.95]]), obs_tables[1]]
        d_obs = sample_from_tables(rng, dag, obs_tables, (2, 2), int(cfg["n_obs"]))
        d_int = sample_from_tables(rng, dag, int_tables, (2, 2), int(cfg["n_int"]))
        symptoms = [1]
    else:
        if not cfg["bcm"] or not cfg["obs"] or not cfg["int"]:
            raise ValueError("oracle requires --bcm, --obs and --int (or --demo)")
        bcm = load_bcm(cfg["bcm"])
        d_obs = np.loadtxt(cfg["obs"], delimiter=",", dtype=int, ndmin=2)
        d_int = np.loadtxt(cfg["int"], delimiter=",", dtype=int, ndmin=2)
        symptoms = list(_int_list(cfg["symptoms"]))
    posterior = enumerate_posterior(bcm, d_obs, d_int, symptoms)
    payload = {
        "posterior": [float(p) for p in posterior],
        "symptoms": symptoms,
        "n_obs": int(np.asarray(d_obs).shape[0]),
        "n_int": int(np.asarray(d_int).shape[0]),
    }
    with open(cfg["out"], "w") as fh:
        json.dump(payload, fh, indent=2)
    out_dir = os.path.dirname(os.path.abspath(cfg["out"]))
    _write_manifest(out_dir, "oracle", cfg, int(cfg["seed"]), [cfg["out"]], started)
    print("posterior:", " ".join(f"{p:.4f}" for p in posterior))
    return 0


def _cmd_bench_latency(args):
    defaults = {"model": None, "k_grid": "20,30,50,80,100", "n_obs": 100,
                "n_int": 20, "repetitions": 10, "seed": 0,
                "out": "latency.csv"}
    cfg = _merge_config(args, defaults)
    if not cfg["model"]:
        raise ValueError("bench-latency requires --model")
    started = time.time()
    store = ParameterStore.load(cfg["model"])
    rows = latency_benchmark(store, _int_list(cfg["k_grid"]),
                             n_obs=int(cfg["n_obs"]), n_int=int(cfg["n_int"]),
                             repetitions=int(cfg["repetitions"]),
                             seed=int(cfg["seed"]))
    write_latency_csv(cfg["out"], rows)
    out_dir = os.path.dirname(os.path.abspath(cfg["out"]))
    _write_manifest(out_dir, "bench-latency", cfg, int(cfg["seed"]),
                    [cfg["out"]], started)
    for row in rows:
        print(f"k={row['k']:>4} median {row['median_ms']:.1f} ms "
              f"[{row['p10_ms']:.1f}, {row['p90_ms']:.1f}]")
    return 0


# --------------------------------------------------------------------- main


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rcalab",
        description="Root-cause-analysis lab: generate episodes, train and "
                    "evaluate the ranker, run baselines and the exact oracle.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, flags):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (flags override it)")
        for flag, kw in flags.items():
            p.add_argument(flag, **kw)
        p.set_defaults(fn=fn)
        return p

    add("generate", _cmd_generate, {
        "--prior": {"choices": PRIOR_PRESETS}, "--episodes": {"type": int},
        "--seed": {"type": int}, "--pad-to": {"type": int, "dest": "pad_to"},
        "--out": {}})
    add("train", _cmd_train, {
        "--prior": {"choices": ("train", "desk")}, "--pad-to": {"type": int, "dest": "pad_to"},
        "--d": {"type": int}, "--blocks": {"type": int}, "--heads": {"type": int},
        "--mlp-hidden": {"type": int, "dest": "mlp_hidden"},
        "--dropout": {"type": float}, "--dtype": {"choices": ("float32", "float64")},
        "--lr": {"type": float}, "--weight-decay": {"type": float, "dest": "weight_decay"},
        "--episodes-per-epoch": {"type": int, "dest": "episodes_per_epoch"},
        "--epochs": {"type": int}, "--n-q": {"type": int, "dest": "n_q"},
        "--seed": {"type": int}, "--workers": {"type": int},
        "--log-every": {"type": int, "dest": "log_every"}, "--out": {}})
    add("finetune", _cmd_finetune, {
        "--checkpoint": {}, "--episodes": {}, "--mode": {"choices": ("full", "decoder_only")},
        "--lr": {"type": float}, "--weight-decay": {"type": float, "dest": "weight_decay"},
        "--epochs": {"type": int}, "--n-q": {"type": int, "dest": "n_q"},
        "--alarm-penalty": {"type": float, "dest": "alarm_penalty"},
        "--warmup-frac": {"type": float, "dest": "warmup_frac"},
        "--seed": {"type": int}, "--out": {}})
    add("evaluate", _cmd_evaluate, {
        "--scenario": {"choices": TOPOLOGIES}, "--methods": {},
        "--model": {}, "--mechanism": {"choices": ("linear", "tanh", "nn", "gp")},
        "--trials": {"type": int}, "--n-obs": {"dest": "n_obs"},
        "--n-int": {"dest": "n_int"}, "--k-grid": {"dest": "k_grid"},
        "--pad-to": {"type": int, "dest": "pad_to"}, "--seed": {"type": int},
        "--out": {}})
    add("infer", _cmd_infer, {
        "--model": {}, "--episodes": {}, "--out": {}})
    add("oracle", _cmd_oracle, {
        "--bcm": {}, "--demo": {}, "--obs": {}, "--int": {"dest": "int"},
        "--symptoms": {}, "--n-obs": {"type": int, "dest": "n_obs"},
        "--n-int": {"type": int, "dest": "n_int"}, "--seed": {"type": int},
        "--out": {}})
    add("bench-latency", _cmd_bench_latency, {
        "--model": {}, "--k-grid": {"dest": "k_grid"},
        "--n-obs": {"type": int, "dest": "n_obs"},
        "--n-int": {"type": int, "dest": "n_int"},
        "--repetitions": {"type": int}, "--seed": {"type": int}, "--out": {}})
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
