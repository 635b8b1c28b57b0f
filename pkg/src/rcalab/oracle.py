"""Exact root-cause posterior on small finite Bayesian causal models.

Enumerates every (graph, mechanism-grid point, target, intervention-grid
point) combination and sums the evidence in log space, yielding the exact
posterior that the amortised network approximates. The per-node sum
factorises, so the full exhaustive sum over product grids is computed
without materialising the product; the same caps still apply so
enumeration finishes in seconds.
"""

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .prior import Dag

MAX_NODES = 3
MAX_CARD = 4
MAX_GRAPHS = 25
MAX_GRID = 10_000


@dataclass
class GraphComponent:
    dag: Dag
    prob: float
    # per node: list of (table, weight); table shape [n_parent_states, card]
    node_options: list
    # per node: list of (table, weight) the intervention may switch to
    intervention_options: list


@dataclass
class DiscreteBcm:
    cards: tuple
    graphs: list                      # of GraphComponent
    target_prior: np.ndarray = None   # over nodes; uniform when omitted

    def __post_init__(self):
        k = len(self.cards)
        if k > MAX_NODES:
            raise ValueError(f"at most {MAX_NODES} nodes supported, got {k}")
        if any(c > MAX_CARD or c < 2 for c in self.cards):
            raise ValueError(f"per-node cardinality must be in [2, {MAX_CARD}]")
        if len(self.graphs) > MAX_GRAPHS:
            raise ValueError(f"at most {MAX_GRAPHS} graphs supported")
        total = sum(g.prob for g in self.graphs)
        if abs(total - 1.0) > 1e-9:
            raise ValueError("graph prior must sum to 1")
        if self.target_prior is None:
            self.target_prior = np.full(k, 1.0 / k)
        self.target_prior = np.asarray(self.target_prior, dtype=float)
        if abs(self.target_prior.sum() - 1.0) > 1e-9:
            raise ValueError("target prior must sum to 1")
        for g in self.graphs:
            grid = 1
            for options in g.node_options:
                grid *= len(options)
            if grid > MAX_GRID:
                raise ValueError(f"mechanism grid has {grid} points, cap is {MAX_GRID}")
            for node, options in enumerate(g.node_options):
                for table, w in options:
                    if not np.allclose(table.sum(axis=1), 1.0, atol=1e-9):
                        raise ValueError(f"node {node}: table rows must sum to 1")

    @property
    def k(self) -> int:
        return len(self.cards)


def _parent_state_index(data, parents, cards):
    """Row-major index of each sample's parent configuration."""
    idx = np.zeros(data.shape[0], dtype=int)
    for p in parents:
        idx = idx * cards[p] + data[:, p]
    return idx


def _node_loglik(table, data, node, parents, cards) -> float:
    rows = _parent_state_index(data, parents, cards)
    probs = table[rows, data[:, node]]
    if np.any(probs <= 0.0):
        return -np.inf
    return float(np.log(probs).sum())


def _tables_equal(a, b) -> bool:
    return a.shape == b.shape and np.array_equal(a, b)


def enumerate_posterior(bcm: DiscreteBcm, d_obs, d_int, symptoms) -> np.ndarray:
    """Exact posterior over single-node root causes given both datasets.

    Sums p(G) p(f_obs|G) p(T|G) p(f_int|T,G) L(D_obs|f_obs) L(D_int|f_int)
    over the full grids, with f_int differing from f_obs exactly at T and
    the symptom set contained in T's descendants-or-self. Targets with no
    supported explanation get exactly zero.
    """
    d_obs = np.asarray(d_obs, dtype=int)
    d_int = np.asarray(d_int, dtype=int)
    k = bcm.k
    for name, d in (("observational", d_obs), ("interventional", d_int)):
        if d.size and (d.min() < 0 or np.any(d.max(axis=0) >= np.array(bcm.cards))):
            raise ValueError(f"{name} data outside the declared support")
    symptoms = {int(s) for s in np.atleast_1d(symptoms)}
    if not symptoms or any(not 0 <= s < k for s in symptoms):
        raise ValueError("symptom set must name valid nodes")

    log_mass = np.full(k, -np.inf)
    for comp in bcm.graphs:
        dag = comp.dag
        # per node and candidate table: log-likelihood on each dataset
        ll_obs, ll_int = [], []
        for node in range(k):
            parents = dag.parents[node]
            ll_obs.append([_node_loglik(t, d_obs, node, parents, bcm.cards) if d_obs.size else 0.0
                           for t, _ in comp.node_options[node]])
            ll_int.append([_node_loglik(t, d_int, node, parents, bcm.cards) if d_int.size else 0.0
                           for t, _ in comp.node_options[node]])
        ll_int_alt = []
        for node in range(k):
            ll_int_alt.append([_node_loglik(t, d_int, node, dag.parents[node], bcm.cards)
                               if d_int.size else 0.0
                               for t, _ in comp.intervention_options[node]])

        # invariant nodes contribute one factor per candidate table
        invariant_factor = np.zeros(k)
        for node in range(k):
            terms = [math.log(w) + ll_obs[node][i] + ll_int[node][i]
                     for i, (t, w) in enumerate(comp.node_options[node])]
            invariant_factor[node] = _logsumexp(terms)

        for t_node in range(k):
            if bcm.target_prior[t_node] <= 0.0:
                continue
            allowed = dag.descendants(t_node) | {t_node}
            if not symptoms <= allowed:
                continue
            # target node: obs table paired with any *different* int table
            target_terms = []
            for i, (tab_obs, w_obs) in enumerate(comp.node_options[t_node]):
                inner = [math.log(w_int) + ll_int_alt[t_node][j]
                         for j, (tab_int, w_int) in enumerate(comp.intervention_options[t_node])
                         if not _tables_equal(tab_obs, tab_int)]
                if not inner:
                    continue
                target_terms.append(math.log(w_obs) + ll_obs[t_node][i] + _logsumexp(inner))
            if not target_terms:
                continue
            total = (math.log(comp.prob) + math.log(bcm.target_prior[t_node])
                     + _logsumexp(target_terms)
                     + sum(invariant_factor[j] for j in range(k) if j != t_node))
            log_mass[t_node] = np.logaddexp(log_mass[t_node], total)

    if np.all(np.isinf(log_mass)):
        raise ValueError("zero total evidence: data inconsistent with every "
                         "prior-supported explanation")
    log_mass -= _logsumexp(list(log_mass[np.isfinite(log_mass)]))
    posterior = np.where(np.isfinite(log_mass), np.exp(log_mass), 0.0)
    return posterior / posterior.sum()


def _logsumexp(terms) -> float:
    terms = [t for t in terms if t > -np.inf]
    if not terms:
        return -np.inf
    hi = max(terms)
    return hi + math.log(sum(math.exp(t - hi) for t in terms))


def kl_to_oracle(oracle_posterior, model_posterior) -> float:
    """KL(oracle || model); +inf when the model misses oracle support."""
    p = np.asarray(oracle_posterior, dtype=float)
    q = np.asarray(model_posterior, dtype=float)
    if p.shape != q.shape:
        raise ValueError("posteriors must share a support")
    out = 0.0
    for pi, qi in zip(p, q):
        if pi <= 0.0:
            continue
        if qi <= 0.0:
            return math.inf
        out += pi * math.log(pi / qi)
    return out


# ---------------------------------------------------------------------------
# constructive specs


def _binary_tables(n_parent_states: int, grid) -> list:
    """All CPTs whose rows take success probabilities from `grid`."""
    tables = []
    for rows in itertools.product(grid, repeat=n_parent_states):
        tables.append(np.array([[1.0 - r, r] for r in rows]))
    return tables


def _component_from_edges(cards, edges, prob, grid):
    k = len(cards)
    parents = [[] for _ in range(k)]
    for a, b in edges:
        parents[b].append(int(a))
    dag = Dag(k=k, parents=tuple(tuple(sorted(p)) for p in parents))
    node_options = []
    for node in range(k):
        n_states = 1
        for p in dag.parents[node]:
            n_states *= cards[p]
        tables = _binary_tables(n_states, grid)
        w = 1.0 / len(tables)
        node_options.append([(t, w) for t in tables])
    return GraphComponent(dag=dag, prob=prob, node_options=node_options,
                          intervention_options=[list(o) for o in node_options])


def bcm_from_config(cfg: dict) -> DiscreteBcm:
    """Build a binary-node BCM from a plain dict (see README for schema).

    Keys: cards (list of 2s), graphs (list of {edges, prob}), grid (row
    success probabilities), optional target_prior.
    """
    cards = tuple(int(c) for c in cfg["cards"])
    if any(c != 2 for c in cards):
        raise ValueError("constructive specs currently support binary nodes only")
    grid = tuple(float(g) for g in cfg.get("grid", (0.2, 0.5, 0.8)))
    comps = [_component_from_edges(cards, g["edges"], float(g["prob"]), grid)
             for g in cfg["graphs"]]
    tp = cfg.get("target_prior")
    return DiscreteBcm(cards=cards, graphs=comps,
                       target_prior=None if tp is None else np.asarray(tp, float))


def load_bcm(path) -> DiscreteBcm:
    with open(path) as fh:
        return bcm_from_config(json.load(fh))


def symmetric_two_node_bcm(grid=(0.2, 0.5, 0.8)) -> DiscreteBcm:
    """Both orientations equally likely, identical grids: fully exchangeable."""
    return bcm_from_config({
        "cards": [2, 2],
        "grid": list(grid),
        "graphs": [{"edges": [[0, 1]], "prob": 0.5},
                   {"edges": [[1, 0]], "prob": 0.5}],
    })


def sample_from_tables(rng, dag: Dag, tables, cards, n: int) -> np.ndarray:
    """Ancestral sampling from explicit CPTs (testing/demo helper)."""
    data = np.zeros((n, dag.k), dtype=int)
    for node in dag.topological_order():
        rows = _parent_state_index(data, dag.parents[node], cards)
        probs = tables[node][rows]
        u = rng.random(n)
        data[:, node] = (u[:, None] > probs.cumsum(axis=1)).sum(axis=1)
    return data
