"""Criterion-10 honest shape: ft on random two-target DAGs, eval on the
fixed convergent-chains template (targets cannot be memorised)."""
import numpy as np

from rcalab.evaluation import bootstrap_ci, map_at_k
from rcalab.model import ParameterStore, predict_proba, predict_ranking
from rcalab.prior import multi_rca_prior, sample_scenario_batch
from rcalab.rng import substream
from rcalab.training import TrainConfig, finetune

from probe_ft4 import episode  # fixed-template episode builder

prior = multi_rca_prior(pad_to=5)
ft_batches = [sample_scenario_batch(substream(117, "ft", i), prior, seed=i)
              for i in range(1600 // prior.n_q)]
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

for lr in (3e-4, 1e-3):
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
