"""Metrics, confidence intervals, scenario grids, and latency timing.

Every method at a given grid point consumes identical episodes (shared
seed substreams), so method-to-method deltas are never confounded by
sampling noise. Tables serialise to CSV/JSON losslessly and are fully
reproducible from (scenario config, seed).
"""

import csv
import itertools
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines
from .episodes import Episode, make_episode
from .factory import FactoryConfig, sample_factory_scenario
from .model import ParameterStore, RankedResult, predict_proba, predict_ranking
from .prior import (
    INTERVENTION_KINDS,
    Dag,
    NoiseSpec,
    apply_intervention,
    sample_dag,
    sample_interventional,
    sample_observational,
    sample_scm,
)
from .rng import substream

TOPOLOGIES = (
    "two_node_identifiable",
    "two_node_nonidentifiable",
    "mediator",
    "confounder",
    "multi_rca_6node",
    "random_sweep",
    "factory",
)
METHODS = ("traversal", "circa", "corr", "eps", "prim")


# ---------------------------------------------------------------------------
# metrics


def recall_at_k(ranking: RankedResult, true_target: int, k: int) -> int:
    """1 when the true cause appears among the first k ranks."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return int(true_target in ranking.order[:k])


def map_at_k(ranking: RankedResult, true_set, k: int) -> float:
    """Average precision at k with denominator min(|true_set|, k)."""
    true_set = set(true_set)
    if not true_set:
        raise ValueError("true set must be non-empty")
    hits = 0
    ap = 0.0
    for i, node in enumerate(ranking.order[:k], start=1):
        if node in true_set:
            hits += 1
            ap += hits / i
    return ap / min(len(true_set), k)


def exact_random_map_at_k(n_nodes: int, n_relevant: int, k: int) -> float:
    """Expected AP@k of a uniformly random ranking, by full enumeration."""
    nodes = list(range(n_nodes))
    true_set = set(range(n_relevant))
    total = 0.0
    count = 0
    for perm in itertools.permutations(nodes):
        total += map_at_k(RankedResult(scores=np.zeros(n_nodes), order=list(perm)),
                          true_set, k)
        count += 1
    return total / count


def bootstrap_ci(values, resamples: int = 500, level: float = 0.90, rng=None):
    """Percentile bootstrap interval for the mean."""
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        raise ValueError("need at least one value")
    if rng is None:
        rng = np.random.default_rng(0)
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# results table


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)

    COLUMNS = ("method", "scenario", "n_obs", "n_int", "metric",
               "mean", "ci_low", "ci_high")

    def add(self, **row):
        missing = set(self.COLUMNS) - set(row)
        if missing:
            raise ValueError(f"row missing columns {sorted(missing)}")
        if not (math.isnan(row["mean"]) or
                row["ci_low"] <= row["mean"] <= row["ci_high"]):
            raise ValueError("interval must bracket the mean")
        self.rows.append({c: row[c] for c in self.COLUMNS})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self.rows:
                writer.writerow([repr(row[c]) if isinstance(row[c], float)
                                 else row[c] for c in self.COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "MetricsTable":
        table = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames) != cls.COLUMNS:
                raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
            for raw in reader:
                table.rows.append({
                    "method": raw["method"], "scenario": raw["scenario"],
                    "n_obs": int(raw["n_obs"]), "n_int": int(raw["n_int"]),
                    "metric": raw["metric"], "mean": float(raw["mean"]),
                    "ci_low": float(raw["ci_low"]), "ci_high": float(raw["ci_high"]),
                })
        return table

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.rows, fh, indent=2)

    def select(self, **filters):
        out = self.rows
        for key, val in filters.items():
            out = [r for r in out if r[key] == val]
        return out

    def value(self, **filters) -> float:
        rows = self.select(**filters)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {filters}")
        return rows[0]["mean"]


# ---------------------------------------------------------------------------
# scenario construction


@dataclass
class ScenarioConfig:
    topology: str
    mechanism: str = "linear"
    n_obs_grid: tuple = (100,)
    n_int_grid: tuple = (10,)
    trials: int = 200
    seed: int = 0
    pad_to: int = 5
    metrics: tuple = None          # default depends on topology
    k_grid: tuple = (5,)           # random_sweep only
    factory: FactoryConfig = None

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if not self.n_obs_grid or not self.n_int_grid:
            raise ValueError("grids must be non-empty")
        if self.metrics is None:
            if self.topology == "multi_rca_6node":
                self.metrics = ("map@2",)
            elif self.topology == "factory":
                self.metrics = ("map@3",)
            else:
                self.metrics = ("recall@1",)


_FIXED = {
    # name -> (parents, targets, symptom)
    "mediator": ((((), (0,), (0, 1))), (0,), 2),     # X -> Z, X -> Y, Z -> Y
    "confounder": ((((1,), (), (0, 1))), (0,), 2),   # Z -> X, Z -> Y, X -> Y
    "multi_rca_6node": ((((), (), (0, 1), (1,), (), (2, 3, 4))), (0, 1), 5),
}


def _parse_metric(metric: str):
    kind, _, k = metric.partition("@")
    if kind not in ("recall", "map") or not k.isdigit():
        raise ValueError(f"unknown metric {metric!r}")
    return kind, int(k)


def _force_gaussian(scm):
    scm.noise = NoiseSpec("gaussian", scm.noise.scale)
    return scm


def _sample_eval_episode(rng, config: ScenarioConfig, n_obs: int, n_int: int,
                         k_nodes: int):
    """One evaluation episode plus its true graph.

    The comparison topologies (mediator, confounder, multi-cause, random
    sweep) use soft weight-change interventions only, matching the
    synthetic comparison convention; the two-node sanity scenarios draw
    the training prior's full intervention mix. The symptom sits at the
    downstream sink for the fixed topologies and follows the prior's
    rule elsewhere.
    """
    topo = config.topology
    if topo == "factory":
        fc = config.factory or FactoryConfig(pad_to=config.pad_to)
        ep = sample_factory_scenario(rng, fc)
        return ep, None
    if topo in _FIXED:
        parents, targets, symptom = _FIXED[topo]
        dag = Dag(k=len(parents), parents=tuple(tuple(p) for p in parents))
    elif topo.startswith("two_node"):
        dag = Dag(k=2, parents=((), (0,)))
        targets, symptom = (0,), None
    else:  # random_sweep
        for _ in range(100):
            dag = sample_dag(rng, k_nodes, "erdos_renyi", float(rng.uniform(1.8, 2.5)))
            if dag.non_leaves():
                break
        eligible = dag.non_leaves()
        targets = (int(eligible[rng.integers(len(eligible))]),)
        symptom = None
    mech = {"two_node_identifiable": "tanh",
            "two_node_nonidentifiable": "linear"}.get(topo, config.mechanism)
    scm = sample_scm(rng, dag, mech)
    if topo.startswith("two_node"):
        scm = _force_gaussian(scm)
    obs_raw, stats = sample_observational(rng, scm, n_obs)
    if topo.startswith("two_node"):
        kind = str(rng.choice(INTERVENTION_KINDS, p=(0.80, 0.15, 0.05)))
    else:
        kind = "weight_change"
    scm_int, _ = apply_intervention(rng, scm, targets, kind, stats)
    int_raw = sample_interventional(rng, scm_int, n_int, stats)
    if symptom is None:
        support = set(targets)
        for t in targets:
            support |= dag.descendants(t)
        symptom = int(rng.choice(sorted(support)))
    ep = make_episode(obs_raw, int_raw, targets, symptom, config.pad_to,
                      family=mech)
    return ep, dag


def score_episode(method: str, episode: Episode, dag, store) -> RankedResult:
    """Run one method on one episode; graph-given methods get the真 graph."""
    k = episode.k_real
    obs = episode.obs[:, :k]
    intv = episode.int_[:, :k]
    symptom = int(np.flatnonzero(episode.mask)[0])
    if method == "traversal":
        if dag is None:
            raise ValueError("traversal needs the true graph")
        return baselines.traversal(dag, obs, intv, symptom)
    if method == "circa":
        if dag is None:
            raise ValueError("circa needs the true graph")
        return baselines.circa_score(dag, obs, intv)
    if method == "corr":
        return baselines.correlation_rank(None, intv, symptom)
    if method == "eps":
        return baselines.epsilon_diagnosis(obs, intv)
    if method == "prim":
        if store is None:
            raise ValueError("prim needs a model checkpoint")
        probs = predict_proba(episode, store)
        return predict_ranking(probs, k)
    raise ValueError(f"unknown method {method!r}")


def run_scenario(config: ScenarioConfig, methods, store: ParameterStore = None,
                 collect_episodes: bool = False):
    """Full paired evaluation grid; returns a MetricsTable.

    A method that cannot run (no checkpoint for `prim`, missing graph for
    the factory topology's graph-given methods) yields rows with NaN
    means, so the table shape is stable across configurations.
    """
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    table = MetricsTable()
    kept = []
    if config.topology == "random_sweep":
        grid = [(k, n_o, n_i) for k in config.k_grid
                for n_o in config.n_obs_grid for n_i in config.n_int_grid]
    else:
        grid = [(None, n_o, n_i) for n_o in config.n_obs_grid
                for n_i in config.n_int_grid]
    for k_nodes, n_obs, n_int in grid:
        label = k_nodes if k_nodes is not None else 0
        episodes = []
        for trial in range(config.trials):
            rng = substream(config.seed, "scenario", config.topology, label,
                            n_obs, n_int, trial)
            episodes.append(_sample_eval_episode(rng, config, n_obs, n_int,
                                                 k_nodes or config.pad_to))
        if collect_episodes:
            kept.extend(episodes)
        for method in methods:
            per_metric = {m: [] for m in config.metrics}
            available = True
            for ep, dag in episodes:
                try:
                    ranking = score_episode(method, ep, dag, store)
                except ValueError:
                    available = False
                    break
                for metric in config.metrics:
                    kind, k = _parse_metric(metric)
                    if kind == "recall":
                        per_metric[metric].append(
                            recall_at_k(ranking, ep.target(), k))
                    else:
                        per_metric[metric].append(
                            map_at_k(ranking, set(ep.targets), k))
            for metric in config.metrics:
                if not available:
                    table.add(method=method, scenario=config.topology,
                              n_obs=n_obs, n_int=n_int, metric=metric,
                              mean=float("nan"), ci_low=float("nan"),
                              ci_high=float("nan"))
                    continue
                vals = per_metric[metric]
                ci = bootstrap_ci(vals, rng=substream(config.seed, "boot",
                                                      method, label, n_obs,
                                                      n_int, metric))
                table.add(method=method, scenario=config.topology,
                          n_obs=n_obs, n_int=n_int, metric=metric,
                          mean=float(np.mean(vals)), ci_low=ci[0], ci_high=ci[1])
    if collect_episodes:
        return table, kept
    return table


# ---------------------------------------------------------------------------
# latency


def latency_benchmark(store: ParameterStore, k_grid, n_obs: int = 100,
                      n_int: int = 20, repetitions: int = 10, seed: int = 0,
                      warmup: int = 2):
    """Single-episode forward wall time per real-node count.

    The input is always padded to the model's k_max, which is what makes
    the cost flat in k. Returns one dict per k with median and spread.
    """
    results = []
    for k in k_grid:
        rng = substream(seed, "latency", k)
        obs = rng.normal(size=(n_obs, k))
        intv = rng.normal(size=(n_int, k))
        ep = make_episode(obs, intv, [0], min(1, k - 1), store.cfg.k_max)
        times = []
        for rep in range(warmup + repetitions):
            t0 = time.perf_counter()
            predict_proba(ep, store)
            elapsed = time.perf_counter() - t0
            if rep >= warmup:
                times.append(elapsed)
        times = np.asarray(times)
        results.append({
            "k": int(k), "n_obs": n_obs, "n_int": n_int,
            "median_ms": float(np.median(times) * 1e3),
            "p10_ms": float(np.quantile(times, 0.10) * 1e3),
            "p90_ms": float(np.quantile(times, 0.90) * 1e3),
            "mean_ms": float(times.mean() * 1e3),
            "repetitions": int(repetitions),
        })
    return results


def write_latency_csv(path, rows) -> None:
    cols = ("k", "n_obs", "n_int", "median_ms", "p10_ms", "p90_ms",
            "mean_ms", "repetitions")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([row[c] for c in cols])
