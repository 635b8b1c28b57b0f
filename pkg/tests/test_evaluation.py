import math

import numpy as np
import pytest

from rcalab.evaluation import (
    MetricsTable,
    ScenarioConfig,
    bootstrap_ci,
    exact_random_map_at_k,
    latency_benchmark,
    map_at_k,
    recall_at_k,
    run_scenario,
    score_episode,
    write_latency_csv,
)
from rcalab.model import ModelConfig, ParameterStore, RankedResult
from rcalab.rng import substream


def ranking(order):
    k = len(order)
    scores = np.array([k - order.index(i) for i in range(k)], dtype=float)
    return RankedResult(scores=scores, order=list(order))


# ----------------------------------------------------------------- metrics


def test_recall_examples():
    assert recall_at_k(ranking([3, 1, 2, 0]), 3, 1) == 1
    assert recall_at_k(ranking([1, 4, 2, 0, 3]), 2, 3) == 1
    assert recall_at_k(ranking([1, 4, 3, 0, 2]), 2, 3) == 0


def test_recall_monotone_in_k():
    rng = substream(0, "mono")
    for _ in range(50):
        order = list(rng.permutation(6))
        target = int(rng.integers(6))
        vals = [recall_at_k(ranking(order), target, k) for k in range(1, 7)]
        assert vals == sorted(vals)


def test_map_examples():
    assert map_at_k(ranking([0, 1, 2, 3]), {0, 1}, 2) == pytest.approx(1.0)
    # miss at rank 1, hit at rank 2: (0 + 1/2) / 2
    assert map_at_k(ranking([3, 0, 1, 2]), {0, 1}, 2) == pytest.approx(0.25)


def test_map_equals_recall_for_single_target_k1():
    rng = substream(1, "eq")
    for _ in range(50):
        order = list(rng.permutation(5))
        target = int(rng.integers(5))
        assert map_at_k(ranking(order), {target}, 1) == \
               recall_at_k(ranking(order), target, 1)


def test_map_bounds_and_validation():
    rng = substream(2, "b")
    for _ in range(30):
        order = list(rng.permutation(6))
        v = map_at_k(ranking(order), {0, 3}, 2)
        assert 0.0 <= v <= 1.0
    with pytest.raises(ValueError):
        map_at_k(ranking([0, 1]), set(), 1)


def test_exact_random_map_baseline_is_4_15():
    value = exact_random_map_at_k(6, 2, 2)
    assert value == pytest.approx(4.0 / 15.0, abs=1e-12)


def test_monte_carlo_random_ranker_matches_enumeration():
    rng = substream(3, "mc")
    vals = []
    for _ in range(10_000):
        order = list(rng.permutation(6))
        vals.append(map_at_k(ranking(order), {0, 1}, 2))
    assert np.mean(vals) == pytest.approx(4.0 / 15.0, abs=0.02)


# --------------------------------------------------------------- bootstrap


def test_bootstrap_degenerate_cases():
    lo, hi = bootstrap_ci([0.7] * 50, rng=substream(4, "b"))
    assert lo == hi == pytest.approx(0.7)
    lo, hi = bootstrap_ci([1.25], rng=substream(5, "b"))
    assert (lo, hi) == (1.25, 1.25)


def test_bootstrap_coverage_near_nominal():
    rng = substream(6, "cov")
    covered = 0
    meta = 500
    for _ in range(meta):
        sample = (rng.random(200) < 0.5).astype(float)
        lo, hi = bootstrap_ci(sample, resamples=500, rng=rng)
        covered += lo <= 0.5 <= hi
    assert covered / meta >= 0.85


# ------------------------------------------------------------------ table


def test_metrics_table_roundtrip(tmp_path):
    t = MetricsTable()
    t.add(method="eps", scenario="mediator", n_obs=100, n_int=10,
          metric="recall@1", mean=1 / 3, ci_low=0.2, ci_high=0.5)
    t.add(method="prim", scenario="mediator", n_obs=100, n_int=10,
          metric="recall@1", mean=float("nan"), ci_low=float("nan"),
          ci_high=float("nan"))
    path = tmp_path / "t.csv"
    t.to_csv(path)
    back = MetricsTable.from_csv(path)
    assert back.rows[0]["mean"] == t.rows[0]["mean"]  # lossless float
    assert math.isnan(back.rows[1]["mean"])
    t.to_json(tmp_path / "t.json")
    assert (tmp_path / "t.json").exists()


def test_metrics_table_validates_interval():
    t = MetricsTable()
    with pytest.raises(ValueError):
        t.add(method="eps", scenario="x", n_obs=1, n_int=1, metric="recall@1",
              mean=0.9, ci_low=0.1, ci_high=0.5)
    with pytest.raises(ValueError):
        t.add(method="eps", scenario="x", n_obs=1, n_int=1, mean=0.5,
              ci_low=0.4, ci_high=0.6)


# --------------------------------------------------------------- scenarios


def test_mediator_graph_is_exact():
    cfg = ScenarioConfig(topology="mediator", trials=2, pad_to=5, seed=1)
    rng = substream(1, "g")
    from rcalab.evaluation import _sample_eval_episode
    ep, dag = _sample_eval_episode(rng, cfg, 30, 5, 3)
    assert dag.parents == ((), (0,), (0, 1))
    assert ep.targets == (0,)
    assert list(np.flatnonzero(ep.mask)) == [2]


def test_multi_rca_topology():
    cfg = ScenarioConfig(topology="multi_rca_6node", trials=1, pad_to=8, seed=2)
    from rcalab.evaluation import _sample_eval_episode
    ep, dag = _sample_eval_episode(substream(2, "g"), cfg, 40, 8, 6)
    assert ep.targets == (0, 1)
    assert dag.descendants(0) == {2, 5}
    assert dag.descendants(1) == {2, 3, 5}
    assert cfg.metrics == ("map@2",)


def test_run_scenario_deterministic_and_paired():
    cfg = ScenarioConfig(topology="confounder", mechanism="linear", trials=6,
                         n_obs_grid=(40,), n_int_grid=(8,), pad_to=5, seed=9)
    t1 = run_scenario(cfg, ["eps", "corr"])
    t2 = run_scenario(cfg, ["eps", "corr"])
    assert t1.rows == t2.rows
    cols = {r["method"] for r in t1.rows}
    assert cols == {"eps", "corr"}
    for row in t1.rows:
        assert 0.0 <= row["mean"] <= 1.0
        assert row["ci_low"] <= row["mean"] <= row["ci_high"]


def test_run_scenario_prim_without_model_marked_unavailable():
    cfg = ScenarioConfig(topology="mediator", trials=3, n_obs_grid=(30,),
                         n_int_grid=(5,), pad_to=4, seed=3)
    t = run_scenario(cfg, ["prim", "eps"])
    prim_row = t.select(method="prim")[0]
    assert math.isnan(prim_row["mean"])
    eps_row = t.select(method="eps")[0]
    assert not math.isnan(eps_row["mean"])


def test_run_scenario_with_tiny_model():
    mc = ModelConfig(d=8, n_blocks=1, heads=2, mlp_hidden=16, k_max=4, dropout=0.0)
    store = ParameterStore.initialize(mc, substream(0, "init"))
    cfg = ScenarioConfig(topology="two_node_identifiable", trials=4,
                         n_obs_grid=(25,), n_int_grid=(6,), pad_to=4, seed=4)
    t = run_scenario(cfg, ["prim"], store=store)
    assert len(t.rows) == 1
    assert not math.isnan(t.rows[0]["mean"])


def test_run_scenario_rejects_unknown():
    with pytest.raises(ValueError):
        ScenarioConfig(topology="nonsense")
    cfg = ScenarioConfig(topology="mediator", pad_to=4)
    with pytest.raises(ValueError):
        run_scenario(cfg, ["nonsense"])


def test_factory_scenario_runs_graph_free_methods():
    from rcalab.factory import FactoryConfig
    cfg = ScenarioConfig(topology="factory", trials=3, n_obs_grid=(60,),
                         n_int_grid=(40,), pad_to=12, seed=5,
                         factory=FactoryConfig(k_range=(6, 9), pad_to=12))
    t = run_scenario(cfg, ["eps", "traversal"])
    eps_row = t.select(method="eps")[0]
    assert not math.isnan(eps_row["mean"])
    trav_row = t.select(method="traversal")[0]  # no graph: unavailable
    assert math.isnan(trav_row["mean"])


# ----------------------------------------------------------------- latency


def test_latency_single_repetition_equals_measurement():
    mc = ModelConfig(d=8, n_blocks=1, heads=2, mlp_hidden=16, k_max=6,
                     dropout=0.0, dtype="float32")
    store = ParameterStore.initialize(mc, substream(0, "init"))
    rows = latency_benchmark(store, k_grid=(3,), n_obs=10, n_int=4,
                             repetitions=1, warmup=1)
    row = rows[0]
    assert row["median_ms"] == row["mean_ms"] == row["p10_ms"] == row["p90_ms"]


def test_latency_csv(tmp_path):
    mc = ModelConfig(d=8, n_blocks=1, heads=2, mlp_hidden=16, k_max=6,
                     dropout=0.0, dtype="float32")
    store = ParameterStore.initialize(mc, substream(0, "init"))
    rows = latency_benchmark(store, k_grid=(2, 4), n_obs=8, n_int=3,
                             repetitions=2, warmup=0)
    path = tmp_path / "lat.csv"
    write_latency_csv(path, rows)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("k,n_obs,n_int,median_ms")


def test_latency_monotone_in_n_obs():
    """More samples cost more at fixed k (attention grows with n_obs)."""
    mc = ModelConfig(d=32, n_blocks=2, heads=4, mlp_hidden=64, k_max=20,
                     dropout=0.0, dtype="float32")
    store = ParameterStore.initialize(mc, substream(7, "init"))
    small = latency_benchmark(store, k_grid=(10,), n_obs=20, n_int=5,
                              repetitions=5, warmup=2)[0]
    big = latency_benchmark(store, k_grid=(10,), n_obs=400, n_int=5,
                            repetitions=5, warmup=2)[0]
    assert big["median_ms"] > small["median_ms"]
