"""Synthetic prior over causal models, interventions, and episodes.

Samples sparse random DAGs (Erdos-Renyi, Barabasi-Albert, bipartite),
equips them with one of five structural-equation families plus a shared
noise family, injects soft or hard interventions at non-leaf nodes, and
assembles normalised, padded episodes. Stateless given an explicit
generator, so episode sampling parallelises by seeding one substream per
episode.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .episodes import Episode, make_episode

GRAPH_FAMILIES = ("erdos_renyi", "barabasi_albert", "bipartite")
MECHANISM_FAMILIES = ("linear", "tanh", "nn", "gp", "baseline")
NOISE_FAMILIES = ("gaussian", "poisson", "salt_pepper", "trunc_exponential")
INTERVENTION_KINDS = ("weight_change", "additive_shift", "hard_do")
GP_KERNELS = ("rbf", "matern12", "matern32")

_STD_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# graphs


@dataclass(frozen=True)
class Dag:
    k: int
    parents: tuple            # per node, sorted tuple of parent indices
    family: str = "erdos_renyi"
    permutation: tuple = ()

    def __post_init__(self):
        for node, ps in enumerate(self.parents):
            if any(p == node for p in ps):
                raise ValueError(f"self-loop at node {node}")
            if any(not 0 <= p < self.k for p in ps):
                raise ValueError(f"parent index out of range at node {node}")
        self.topological_order()  # raises on cycles

    def children(self):
        ch = [[] for _ in range(self.k)]
        for node, ps in enumerate(self.parents):
            for p in ps:
                ch[p].append(node)
        return [tuple(c) for c in ch]

    def topological_order(self):
        indeg = [len(p) for p in self.parents]
        ch = [[] for _ in range(self.k)]
        for node, ps in enumerate(self.parents):
            for p in ps:
                ch[p].append(node)
        frontier = sorted(i for i in range(self.k) if indeg[i] == 0)
        order = []
        while frontier:
            node = frontier.pop(0)
            order.append(node)
            for c in ch[node]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    frontier.append(c)
            frontier.sort()
        if len(order) != self.k:
            raise ValueError("graph contains a cycle")
        return order

    def descendants(self, node: int) -> set:
        ch = self.children()
        out, stack = set(), list(ch[node])
        while stack:
            cur = stack.pop()
            if cur not in out:
                out.add(cur)
                stack.extend(ch[cur])
        return out

    def ancestors(self, node: int) -> set:
        out, stack = set(), list(self.parents[node])
        while stack:
            cur = stack.pop()
            if cur not in out:
                out.add(cur)
                stack.extend(self.parents[cur])
        return out

    def non_leaves(self):
        return [i for i, c in enumerate(self.children()) if c]

    def edges(self):
        return [(p, node) for node, ps in enumerate(self.parents) for p in ps]


def _permute(base_parents, perm):
    k = len(base_parents)
    new = [None] * k
    for i in range(k):
        new[perm[i]] = tuple(sorted(perm[j] for j in base_parents[i]))
    return tuple(new)


def sample_dag(rng: np.random.Generator, k: int, family: str,
               mean_in_degree: float) -> Dag:
    """Random DAG with edge probability mean_in_degree / (k - 1)."""
    if k < 2:
        raise ValueError(f"need at least 2 nodes, got {k}")
    if family not in GRAPH_FAMILIES:
        raise ValueError(f"unknown graph family {family!r}")
    p = min(1.0, mean_in_degree / (k - 1))
    base = [[] for _ in range(k)]
    if family == "erdos_renyi":
        for j in range(1, k):
            base[j] = [i for i in range(j) if rng.random() < p]
    elif family == "barabasi_albert":
        degree = np.zeros(k)
        for j in range(1, k):
            n_par = int(rng.binomial(j, p))
            if n_par > 0:
                weights = degree[:j] + 1.0
                parents = rng.choice(j, size=n_par, replace=False,
                                     p=weights / weights.sum())
                base[j] = sorted(int(x) for x in parents)
                degree[parents] += 1
                degree[j] += n_par
    else:  # bipartite: edges only cross the two parts
        part = rng.random(k) < 0.5
        if part.all() or not part.any():
            part[rng.integers(k)] ^= True
        sources = np.flatnonzero(part)
        sinks = np.flatnonzero(~part)
        for s in sources:
            for t in sinks:
                if rng.random() < p:
                    base[t].append(int(s))
    perm = tuple(int(x) for x in rng.permutation(k))
    return Dag(k=k, parents=_permute([tuple(sorted(b)) for b in base], perm),
               family=family, permutation=perm)


# ---------------------------------------------------------------------------
# mechanisms and noise


@dataclass(frozen=True)
class NoiseSpec:
    family: str
    scale: float  # sigma, log-uniform on [0.05, 2.0] in the training prior


def sample_noise(rng: np.random.Generator, spec: NoiseSpec, size: int) -> np.ndarray:
    """Mean-zero draws; every family is centred so mechanism means agree."""
    s = spec.scale
    if spec.family == "gaussian":
        return rng.normal(0.0, s, size)
    if spec.family == "poisson":
        lam = s * s
        return rng.poisson(lam, size).astype(float) - lam
    if spec.family == "salt_pepper":
        base = rng.normal(0.0, 0.1 * s, size)
        spikes = rng.random(size) < 0.05
        base[spikes] = np.where(rng.random(spikes.sum()) < 0.5, -5.0 * s, 5.0 * s)
        return base
    if spec.family == "trunc_exponential":
        # Exp(rate 1/s) truncated at 3s, then centred
        cap = 1.0 - math.exp(-3.0)
        u = rng.random(size) * cap
        x = -s * np.log1p(-u)
        return x - s * (1.0 - 3.0 * math.exp(-3.0) / cap)
    raise ValueError(f"unknown noise family {spec.family!r}")


@dataclass
class MechanismSpec:
    """Per-node structural equation plus any intervention modifiers."""

    family: str
    weights: np.ndarray = None        # linear/tanh incoming weights
    slopes: np.ndarray = None         # tanh slopes
    lam: float = 0.0                  # latent-confounder weight
    eta: float = 1.0                  # linear heteroscedastic noise coefficient
    nn_layers: tuple = None           # ((W, b, act), ...)
    gp: dict = None                   # kernel, lengthscale, output_scale, noise_var
    baseline: float = 0.0
    # intervention state
    shift: float = 0.0
    noise_mult: float = 1.0
    pinned: bool = False
    pin_value: float = 0.0


def mechanism_equal(a: MechanismSpec, b: MechanismSpec) -> bool:
    if a is b:
        return True
    for f in ("family", "lam", "eta", "baseline", "shift", "noise_mult",
              "pinned", "pin_value"):
        if getattr(a, f) != getattr(b, f):
            return False
    for f in ("weights", "slopes"):
        x, y = getattr(a, f), getattr(b, f)
        if (x is None) != (y is None) or (x is not None and not np.array_equal(x, y)):
            return False
    if (a.nn_layers is None) != (b.nn_layers is None):
        return False
    if a.nn_layers is not None:
        if len(a.nn_layers) != len(b.nn_layers):
            return False
        for (wa, ba, acta), (wb, bb, actb) in zip(a.nn_layers, b.nn_layers):
            if acta != actb or not np.array_equal(wa, wb) or not np.array_equal(ba, bb):
                return False
    return a.gp == b.gp


_NN_HIDDEN = (16, 16)
_NN_ACTS = ("sigmoid", "tanh", "relu")


def _sample_nn(rng, in_dim: int):
    layers = []
    dims = (max(in_dim, 1),) + _NN_HIDDEN + (1,)
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, dims[i + 1]))
        b = np.zeros(dims[i + 1])
        act = str(rng.choice(_NN_ACTS)) if i < len(dims) - 2 else "identity"
        layers.append((w, b, act))
    return tuple(layers)


def _nn_forward(layers, x):
    h = x
    for w, b, act in layers:
        h = h @ w + b
        if act == "sigmoid":
            h = 1.0 / (1.0 + np.exp(-h))
        elif act == "tanh":
            h = np.tanh(h)
        elif act == "relu":
            h = np.maximum(h, 0.0)
    return h[:, 0]


class ScmInstance:
    """A sampled model: DAG plus one mechanism per node and a noise law.

    GP nodes keep a per-episode function cache so the same latent
    function underlies every regime sampled from this instance.
    """

    def __init__(self, dag: Dag, family: str, mechanisms, noise: NoiseSpec,
                 gp_cache=None):
        self.dag = dag
        self.family = family
        self.mechanisms = list(mechanisms)
        self.noise = noise
        self.gp_cache = gp_cache if gp_cache is not None else {}


def sample_scm(rng: np.random.Generator, dag: Dag, family: str) -> ScmInstance:
    """Draw per-node structural equations of one family plus shared noise."""
    if family not in MECHANISM_FAMILIES:
        raise ValueError(f"unknown mechanism family {family!r}")
    noise = NoiseSpec(
        family=str(rng.choice(NOISE_FAMILIES)),
        scale=float(np.exp(rng.uniform(math.log(0.05), math.log(2.0)))),
    )
    mechs = []
    for node in range(dag.k):
        n_par = len(dag.parents[node])
        if family == "linear":
            mechs.append(MechanismSpec(
                family=family,
                weights=rng.normal(0.0, math.sqrt(3.0), n_par),
                lam=float(rng.normal(0.0, 1.0)),
                eta=float(rng.gamma(2.5, 1.0 / 2.5)),
            ))
        elif family == "tanh":
            mechs.append(MechanismSpec(
                family=family,
                weights=rng.normal(0.0, math.sqrt(3.0), n_par),
                slopes=rng.uniform(0.8, 1.5, n_par),
                lam=float(rng.normal(0.0, 1.0)),
            ))
        elif family == "nn":
            mechs.append(MechanismSpec(family=family, nn_layers=_sample_nn(rng, n_par)))
        elif family == "gp":
            mechs.append(MechanismSpec(family=family, gp={
                "kernel": str(rng.choice(GP_KERNELS)),
                "lengthscale": float(np.exp(rng.uniform(math.log(0.1), math.log(5.0)))),
                "output_scale": float(rng.uniform(0.5, 2.0)),
                "noise_var": float(rng.gamma(2.5, 0.4)),
            }))
        else:  # baseline: constant level, near-zero noise
            mechs.append(MechanismSpec(family=family, baseline=float(rng.uniform(90.0, 100.0))))
    return ScmInstance(dag, family, mechs, noise)


# ---------------------------------------------------------------------------
# GP function draws, consistent across regimes within an episode


def _kernel_matrix(gp, xa, xb):
    ls, a2 = gp["lengthscale"], gp["output_scale"] ** 2
    d = np.sqrt(np.maximum(
        ((xa[:, None, :] - xb[None, :, :]) ** 2).sum(-1), 0.0))
    if gp["kernel"] == "rbf":
        return a2 * np.exp(-0.5 * (d / ls) ** 2)
    if gp["kernel"] == "matern12":
        return a2 * np.exp(-d / ls)
    r = math.sqrt(3.0) * d / ls
    return a2 * (1.0 + r) * np.exp(-r)


def _gp_draw(rng, gp, cache, node, x_new):
    """Sample f(x_new) jointly consistent with all earlier draws."""
    jitter = 1e-8 * gp["output_scale"] ** 2 + 1e-12
    if node not in cache:
        k = _kernel_matrix(gp, x_new, x_new)
        chol = np.linalg.cholesky(k + jitter * np.eye(len(x_new)))
        f = chol @ rng.normal(size=len(x_new))
    else:
        x_old, f_old = cache[node]
        k_oo = _kernel_matrix(gp, x_old, x_old) + jitter * np.eye(len(x_old))
        k_on = _kernel_matrix(gp, x_old, x_new)
        k_nn = _kernel_matrix(gp, x_new, x_new)
        chol_o = np.linalg.cholesky(k_oo)
        alpha = np.linalg.solve(chol_o.T, np.linalg.solve(chol_o, f_old))
        mu = k_on.T @ alpha
        v = np.linalg.solve(chol_o, k_on)
        cov = k_nn - v.T @ v
        chol_n = np.linalg.cholesky(cov + jitter * np.eye(len(x_new)))
        f = mu + chol_n @ rng.normal(size=len(x_new))
        x_new = np.concatenate([x_old, x_new])
        f = np.concatenate([f_old, f])
        cache[node] = (x_new, f)
        return f[len(x_old):]
    cache[node] = (x_new, f)
    return f


# ---------------------------------------------------------------------------
# forward sampling


def _zscore(col, stats):
    mean, std = stats
    return (col - mean) / std


def _eval_node(rng, scm, node, data, stats):
    """One node's values for every row, given sampled parent columns."""
    mech = scm.mechanisms[node]
    n = data.shape[0]
    if mech.pinned:
        return np.full(n, mech.pin_value)
    parents = scm.dag.parents[node]
    eps = sample_noise(rng, scm.noise, n) * mech.noise_mult
    if mech.family == "baseline":
        return mech.baseline + 0.01 * eps + mech.shift
    if mech.family == "linear":
        h = rng.normal(size=n)
        out = mech.lam * h + mech.eta * eps
        if parents:
            z = np.column_stack([_zscore(data[:, p], stats[p]) for p in parents])
            out = out + z @ mech.weights
        return out + mech.shift
    if mech.family == "tanh":
        h = rng.normal(size=n)
        out = mech.lam * h + eps
        if parents:
            raw = data[:, list(parents)]
            out = out + np.tanh(raw * mech.slopes) @ mech.weights
        return out + mech.shift
    if mech.family == "nn":
        if not parents:
            return _nn_forward(mech.nn_layers, eps[:, None]) + mech.shift
        return _nn_forward(mech.nn_layers, data[:, list(parents)]) + eps + mech.shift
    # gp: inputs are z-scored parents plus a latent confounder coordinate
    h = rng.normal(size=n)
    if parents:
        x = np.column_stack([_zscore(data[:, p], stats[p]) for p in parents] + [h])
    else:
        x = h[:, None]
    f = _gp_draw(rng, mech.gp, scm.gp_cache, node, x)
    gp_eps = rng.normal(0.0, math.sqrt(mech.gp["noise_var"]), n) * mech.noise_mult
    return f + gp_eps + mech.shift


def sample_observational(rng: np.random.Generator, scm: ScmInstance, n: int):
    """Ancestral sampling in topological order.

    Returns (data, stats) where stats[node] = (mean, std) of the realised
    column; children z-score parent values against exactly these stats,
    and interventional sampling reuses them so the mechanism is one fixed
    function across regimes.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    data = np.zeros((n, scm.dag.k))
    stats = {}
    for node in scm.dag.topological_order():
        col = _eval_node(rng, scm, node, data, stats)
        data[:, node] = col
        stats[node] = (float(col.mean()), float(max(col.std(), _STD_FLOOR)))
    return data, stats


def sample_interventional(rng: np.random.Generator, scm: ScmInstance, n: int,
                          obs_stats: dict) -> np.ndarray:
    """Forward-sample the modified model, z-scoring with normal-regime stats."""
    data = np.zeros((n, scm.dag.k))
    for node in scm.dag.topological_order():
        data[:, node] = _eval_node(rng, scm, node, data, obs_stats)
    return data


# ---------------------------------------------------------------------------
# interventions


@dataclass(frozen=True)
class InterventionSpec:
    targets: tuple
    kind: str
    scale: float = 0.0
    shifts: tuple = ()    # (node, delta) pairs for additive interventions
    pins: tuple = ()      # (node, value) pairs for hard interventions


def _intervene_weight_change(rng, mech: MechanismSpec, c: float,
                             n_parents: int) -> MechanismSpec:
    if mech.family in ("linear", "tanh") and n_parents > 0:
        signs = rng.choice([-1.0, 1.0], size=len(mech.weights))
        return replace(mech, weights=c * signs * mech.weights)
    if mech.family == "linear":
        # root: its noise is the whole exogenous part lam*h + eta*eps, so
        # scaling the noise std by c scales both components
        return replace(mech, eta=c * mech.eta, lam=c * mech.lam)
    if mech.family == "tanh" and n_parents == 0:
        return replace(mech, lam=c * mech.lam, noise_mult=c * mech.noise_mult)
    if mech.family == "nn" and n_parents > 0:
        if rng.random() < 0.5:
            new_layers = []
            for w, b, act in mech.nn_layers:
                signs = rng.choice([-1.0, 1.0], size=w.shape)
                new_layers.append((c * signs * w, b, act))
        else:
            # swap each hidden activation for a different one
            new_layers = []
            for w, b, act in mech.nn_layers:
                if act == "identity":
                    new_layers.append((w, b, act))
                else:
                    choices = [a for a in _NN_ACTS if a != act]
                    new_layers.append((w, b, str(rng.choice(choices))))
        return replace(mech, nn_layers=tuple(new_layers))
    # gp, baseline, and root fallbacks: perturb the noise pathway
    return replace(mech, noise_mult=c * mech.noise_mult)


def apply_intervention(rng: np.random.Generator, scm: ScmInstance, targets,
                       kind: str, obs_stats: dict):
    """Modified model; mechanisms outside the target set are shared as-is."""
    targets = tuple(int(t) for t in targets)
    if not targets:
        raise ValueError("intervention needs at least one target")
    for t in targets:
        if not 0 <= t < scm.dag.k:
            raise ValueError(f"target {t} outside the graph")
    if kind not in INTERVENTION_KINDS:
        raise ValueError(f"unknown intervention kind {kind!r}")
    c = float(rng.uniform(3.0, 5.0))
    mechs = list(scm.mechanisms)
    shifts, pins = [], []
    for t in targets:
        mech = mechs[t]
        if kind == "weight_change":
            mechs[t] = _intervene_weight_change(rng, mech, c, len(scm.dag.parents[t]))
        elif kind == "additive_shift":
            if mech.family == "baseline":
                delta = -mech.baseline * rng.uniform(0.03, 0.15)
            else:
                sign = -1.0 if rng.random() < 0.5 else 1.0
                delta = sign * rng.uniform(0.5, 2.0) * scm.noise.scale * c
            mechs[t] = replace(mech, shift=mech.shift + delta)
            shifts.append((t, float(delta)))
        else:  # hard_do: stuck sensor, 2--4 obs std-devs from the obs mean
            mean, std = obs_stats[t]
            sign = -1.0 if rng.random() < 0.5 else 1.0
            value = mean + sign * rng.uniform(2.0, 4.0) * std
            mechs[t] = replace(mech, pinned=True, pin_value=float(value))
            pins.append((t, float(value)))
    spec = InterventionSpec(targets=targets, kind=kind, scale=c,
                            shifts=tuple(shifts), pins=tuple(pins))
    out = ScmInstance(scm.dag, scm.family, mechs, scm.noise, gp_cache=scm.gp_cache)
    return out, spec


# ---------------------------------------------------------------------------
# episode assembly


@dataclass
class PriorConfig:
    """Distributional knobs for episode sampling."""

    k_min: int = 2
    k_max: int = 5
    pad_to: int = 5
    graph_families: tuple = GRAPH_FAMILIES
    mechanism_families: tuple = MECHANISM_FAMILIES
    mean_in_degree: tuple = (1.8, 2.5)
    n_obs_range: tuple = (5, 500)
    n_int_range: tuple = (1, 200)
    intervention_probs: tuple = (0.80, 0.15, 0.05)
    n_q: int = 4
    n_targets: int = 1

    def __post_init__(self):
        if self.k_min < 2 or self.k_max < self.k_min or self.pad_to < self.k_max:
            raise ValueError("need 2 <= k_min <= k_max <= pad_to")
        if abs(sum(self.intervention_probs) - 1.0) > 1e-9:
            raise ValueError("intervention probabilities must sum to 1")


def training_prior(pad_to: int = 5, k_min: int = 2, k_max: int = None) -> PriorConfig:
    """The full training prior at a given padding size."""
    return PriorConfig(k_min=k_min, k_max=k_max or pad_to, pad_to=pad_to)


def desk_prior(pad_to: int = 5) -> PriorConfig:
    """Laptop-scale prior: linear+tanh only, trimmed sample ranges."""
    return PriorConfig(
        k_min=2, k_max=pad_to, pad_to=pad_to,
        mechanism_families=("linear", "tanh"),
        n_obs_range=(5, 150), n_int_range=(1, 50),
    )


def multi_rca_prior(pad_to: int = 5, n_targets: int = 2) -> PriorConfig:
    """Fine-tuning prior with several simultaneous root causes."""
    cfg = desk_prior(pad_to)
    return replace(cfg, n_targets=n_targets, k_min=max(3, cfg.k_min),
                   n_obs_range=(40, 150), n_int_range=(5, 20))


def _sample_model(rng, config: PriorConfig):
    """DAG + SCM with enough intervenable nodes; degenerate graphs redrawn."""
    for _ in range(100):
        k = int(rng.integers(config.k_min, config.k_max + 1))
        g_family = str(rng.choice(config.graph_families))
        dbar = float(rng.uniform(*config.mean_in_degree))
        dag = sample_dag(rng, k, g_family, dbar)
        if len(dag.non_leaves()) >= config.n_targets:
            m_family = str(rng.choice(config.mechanism_families))
            return sample_scm(rng, dag, m_family)
    raise RuntimeError("could not sample a graph with an eligible intervention target")


def _sample_scenario(rng, scm: ScmInstance, config: PriorConfig, seed: int = -1) -> Episode:
    episode, _ = _sample_scenario_detailed(rng, scm, config, seed)
    return episode


def _sample_scenario_detailed(rng, scm: ScmInstance, config: PriorConfig,
                              seed: int = -1):
    n_obs = int(rng.integers(config.n_obs_range[0], config.n_obs_range[1] + 1))
    obs_raw, stats = sample_observational(rng, scm, n_obs)
    eligible = scm.dag.non_leaves()
    idx = rng.choice(len(eligible), size=config.n_targets, replace=False)
    targets = tuple(sorted(eligible[i] for i in np.atleast_1d(idx)))
    kind = str(rng.choice(INTERVENTION_KINDS, p=config.intervention_probs))
    scm_int, ispec = apply_intervention(rng, scm, targets, kind, stats)
    n_int = int(rng.integers(config.n_int_range[0], config.n_int_range[1] + 1))
    int_raw = sample_interventional(rng, scm_int, n_int, stats)
    support = set(targets)
    for t in targets:
        support |= scm.dag.descendants(t)
    symptom = int(rng.choice(sorted(support)))
    episode = make_episode(obs_raw, int_raw, targets, symptom, config.pad_to,
                           family=scm.family, seed=seed)
    return episode, ispec


def sample_scenario_batch(rng: np.random.Generator, config: PriorConfig,
                          seed: int = -1):
    """One model, n_q independent scenarios: the unit of a training step."""
    scm = _sample_model(rng, config)
    return [_sample_scenario(rng, scm, config, seed) for _ in range(config.n_q)]


def sample_episode(rng: np.random.Generator, config: PriorConfig,
                   seed: int = -1) -> Episode:
    """A single scenario on a freshly sampled model."""
    scm = _sample_model(rng, config)
    return _sample_scenario(rng, scm, config, seed)


def sample_episode_detailed(rng: np.random.Generator, config: PriorConfig,
                            seed: int = -1):
    """(episode, model, intervention) for inspection-style checks."""
    scm = _sample_model(rng, config)
    episode, ispec = _sample_scenario_detailed(rng, scm, config, seed)
    return episode, scm, ispec
