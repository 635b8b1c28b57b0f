"""Fine-tune rehearsal: bigger lr and a clearer held-out operating point."""
from dataclasses import replace

import numpy as np

from rcalab.evaluation import bootstrap_ci, map_at_k
from rcalab.model import ParameterStore, predict_proba, predict_ranking
from rcalab.prior import multi_rca_prior, sample_scenario_batch
from rcalab.rng import substream
from rcalab.training import TrainConfig, finetune

prior = multi_rca_prior(pad_to=5)
batches = [sample_scenario_batch(substream(117, "ft", i), prior, seed=i)
           for i in range(1600 // prior.n_q)]
eval_prior = replace(prior, n_obs_range=(100, 100), n_int_range=(50, 50))
held = [sample_scenario_batch(substream(118, "held", i), eval_prior, seed=i)[0]
        for i in range(200)]


def map2(st):
    vals = []
    for ep in held:
        probs = predict_proba(ep, st)
        vals.append(map_at_k(predict_ranking(probs, ep.k_real), set(ep.targets), 2))
    return np.asarray(vals)


zs = map2(ParameterStore.load("exp/probe_c.rckp"))
lo_z, hi_z = bootstrap_ci(zs, rng=substream(120, "b"))
print(f"zero-shot MAP@2 @(100,50): {zs.mean():.3f} [{lo_z:.3f}, {hi_z:.3f}]",
      flush=True)

for lr in (3e-4, 1e-3):
    store = ParameterStore.load("exp/probe_c.rckp")
    finetune(store, batches, TrainConfig(lr=lr, epochs=5, n_q=prior.n_q,
                                         seed=119, finetune_mode="full"))
    ft = map2(store)
    lo_t, hi_t = bootstrap_ci(ft, rng=substream(121, "b"))
    margin = ft.mean() - zs.mean()
    width = max(hi_z - lo_z, hi_t - lo_t)
    print(f"lr={lr}: MAP@2 {ft.mean():.3f} [{lo_t:.3f}, {hi_t:.3f}]; "
          f"margin {margin:.3f} vs width {width:.3f} -> "
          f"{'OK' if margin > width else 'INSUFFICIENT'}", flush=True)
