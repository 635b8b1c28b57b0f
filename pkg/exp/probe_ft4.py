"""Criterion-10 rehearsal on a two-independent-roots template.

Fixed convergent-chains topology (X1->X3->X5, X2->X4->X5), fresh
mechanisms per episode, both roots intervened.
"""
import numpy as np

from rcalab.episodes import make_episode
from rcalab.evaluation import bootstrap_ci, map_at_k
from rcalab.model import ParameterStore, predict_proba, predict_ranking
from rcalab.prior import (Dag, INTERVENTION_KINDS, NoiseSpec,
                          apply_intervention, sample_interventional,
                          sample_observational, sample_scm)
from rcalab.rng import substream
from rcalab.training import TrainConfig, finetune

DAG = Dag(k=5, parents=((), (), (0,), (1,), (2, 3)))
TARGETS = (0, 1)


def episode(rng, n_obs, n_int):
    fam = str(rng.choice(("linear", "tanh")))
    scm = sample_scm(rng, DAG, fam)
    obs_raw, stats = sample_observational(rng, scm, n_obs)
    kind = str(rng.choice(INTERVENTION_KINDS, p=(0.80, 0.15, 0.05)))
    scm2, _ = apply_intervention(rng, scm, TARGETS, kind, stats)
    int_raw = sample_interventional(rng, scm2, n_int, stats)
    support = {0, 1, 2, 3, 4}
    symptom = int(rng.choice(sorted(support)))
    return make_episode(obs_raw, int_raw, TARGETS, symptom, 5, family=fam)


def batches_for(seed, count, rng_tag):
    out = []
    for i in range(count // 4):
        rng = substream(seed, rng_tag, i)
        n_obs = int(rng.integers(40, 151))
        n_int = int(rng.integers(5, 21))
        out.append([episode(rng, n_obs, n_int) for _ in range(4)])
    return out


ft_batches = batches_for(130, 1600, "ft")
held = []
for i in range(200):
    rng = substream(131, "held", i)
    held.append(episode(rng, 100, int(rng.integers(5, 21))))


def map2(st):
    vals = []
    for ep in held:
        probs = predict_proba(ep, st)
        vals.append(map_at_k(predict_ranking(probs, ep.k_real), set(ep.targets), 2))
    return np.asarray(vals)


zs = map2(ParameterStore.load("exp/probe_c.rckp"))
lo_z, hi_z = bootstrap_ci(zs, rng=substream(132, "b"))
print(f"zero-shot MAP@2 {zs.mean():.3f} [{lo_z:.3f}, {hi_z:.3f}]", flush=True)

for lr in (3e-4,):
    store = ParameterStore.load("exp/probe_c.rckp")
    finetune(store, ft_batches, TrainConfig(lr=lr, epochs=5, n_q=4, seed=133,
                                            finetune_mode="full"))
    ft = map2(store)
    lo_t, hi_t = bootstrap_ci(ft, rng=substream(134, "b"))
    margin = ft.mean() - zs.mean()
    width = max(hi_z - lo_z, hi_t - lo_t)
    print(f"lr={lr}: MAP@2 {ft.mean():.3f} [{lo_t:.3f}, {hi_t:.3f}]; "
          f"margin {margin:.3f} vs width {width:.3f} -> "
          f"{'OK' if margin > width else 'INSUFFICIENT'}", flush=True)
