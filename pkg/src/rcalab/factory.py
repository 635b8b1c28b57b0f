"""Event-driven factory scenarios with a time-as-feature column.

Continuous sensors follow a mean-reverting AR(1) process in the normal
regime; injected faults shift each reachable node by 15 sigma attenuated
by 0.30 per causal hop, arriving after a per-hop propagation delay.
Binary sensors flip state with probability 0.75^hops. A zero-mean linear
time ramp is appended as an extra node so the network can tell early
movers from late ones, and flipped binary sensors become the alarm mask.
"""

from dataclasses import dataclass

import numpy as np

from .episodes import CLIP, STD_FLOOR, Episode
from .prior import sample_dag

AR_COEF = 0.95
FAULT_SIGMA_MULT = 15.0
HOP_ATTENUATION = 0.30
BINARY_FLIP_BASE = 0.75
BINARY_NOISE = 0.005


@dataclass
class FactoryConfig:
    k_range: tuple = (8, 16)
    pad_to: int = 20
    fault_count_probs: tuple = (0.70, 0.20, 0.10)  # P(|T| = 1, 2, 3)
    hop_delay_range: tuple = (2, 6)                # AR steps per causal hop
    t_obs: int = 60                                # pre-fault window length
    t_int: int = 40                                # post-fault window length
    binary_frac: float = 0.3
    mu_range: tuple = (-2.0, 2.0)
    sigma_range: tuple = (0.05, 0.5)

    def __post_init__(self):
        if self.pad_to < self.k_range[1] + 1:
            raise ValueError("pad_to must fit the node count plus the time ramp")
        if abs(sum(self.fault_count_probs) - 1.0) > 1e-9:
            raise ValueError("fault count probabilities must sum to 1")


def _hop_distances(dag, targets):
    """Shortest forward hop distance from any target; unreachable = None."""
    children = dag.children()
    dist = {t: 0 for t in targets}
    frontier = list(targets)
    while frontier:
        nxt = []
        for node in frontier:
            for c in children[node]:
                if c not in dist:
                    dist[c] = dist[node] + 1
                    nxt.append(c)
        frontier = nxt
    return dist


def time_ramp(t_max: int, k_real: int, pad_to: int) -> np.ndarray:
    """Zero-mean linear ramp scaled like the data columns."""
    t = np.arange(t_max)
    return (pad_to / k_real) * (2.0 * t / (t_max - 1) - 1.0)


def sample_factory_scenario(rng: np.random.Generator, config: FactoryConfig,
                            seed: int = -1) -> Episode:
    k = int(rng.integers(config.k_range[0], config.k_range[1] + 1))
    family = str(rng.choice(("erdos_renyi", "barabasi_albert")))
    p_edge = float(rng.uniform(0.2, 0.5))
    dag = sample_dag(rng, k, family, p_edge * (k - 1))

    binary = rng.random(k) < config.binary_frac
    mu = np.where(binary, (rng.random(k) < 0.5).astype(float),
                  rng.uniform(*config.mu_range, size=k))
    sigma = np.where(binary, BINARY_NOISE,
                     np.exp(rng.uniform(np.log(config.sigma_range[0]),
                                        np.log(config.sigma_range[1]), size=k)))

    n_faults = int(rng.choice((1, 2, 3), p=config.fault_count_probs))
    n_faults = min(n_faults, k)
    targets = tuple(sorted(int(t) for t in rng.choice(k, size=n_faults, replace=False)))
    dist = _hop_distances(dag, targets)
    tau = float(rng.uniform(*config.hop_delay_range))

    t_total = config.t_obs + config.t_int
    t0 = config.t_obs
    x = np.zeros((t_total, k))
    eps = rng.normal(size=(t_total, k)) * sigma
    x[0] = mu + eps[0]
    flip_time = {}
    for node, d in dist.items():
        if binary[node]:
            if rng.random() < BINARY_FLIP_BASE ** d:
                flip_time[node] = t0 + int(round(d * tau))
        else:
            flip_time[node] = t0 + int(round(d * tau))

    for t in range(1, t_total):
        x[t] = mu + AR_COEF * (x[t - 1] - mu) + eps[t]
        for node, d in dist.items():
            if t < flip_time.get(node, t_total + 1):
                continue
            if binary[node]:
                x[t, node] = (1.0 - mu[node]) + eps[t, node]
            else:
                # faulted sensors hold a shifted level, attenuated per hop
                m_i = FAULT_SIGMA_MULT * sigma[node]
                x[t, node] = mu[node] + m_i * HOP_ATTENUATION ** d + eps[t, node]

    obs_win, int_win = x[:t0], x[t0:]
    means = obs_win.mean(axis=0)
    stds = np.maximum(obs_win.std(axis=0), STD_FLOOR)
    k_real = k + 1  # the ramp is a visible node
    scale = config.pad_to / k_real

    def prep(win):
        z = np.clip((win - means) / stds, -CLIP, CLIP) * scale
        out = np.zeros((win.shape[0], config.pad_to))
        out[:, :k] = z
        return out

    obs = prep(obs_win)
    intv = prep(int_win)
    ramp = time_ramp(t_total, k_real, config.pad_to)
    obs[:, k] = ramp[:t0]
    intv[:, k] = ramp[t0:]

    alarms = sorted(n for n in flip_time if binary[n] and flip_time[n] < t_total)
    if not alarms:
        downstream = [n for n, d in dist.items() if d >= 1]
        if downstream:
            shifts = {n: FAULT_SIGMA_MULT * HOP_ATTENUATION ** dist[n] for n in downstream}
            alarms = [max(shifts, key=shifts.get)]
        else:
            alarms = list(targets)
    mask = np.zeros(config.pad_to, dtype=bool)
    mask[alarms] = True

    return Episode(
        obs=obs, int_=intv, mask=mask, targets=targets, k_real=k_real,
        pad_mask=np.arange(config.pad_to) >= k_real,
        norm_stats=(means, stds), family="factory", seed=seed,
    )
