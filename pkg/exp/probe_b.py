"""Capacity probe: heads=4, mlp=128 (d=32, L=2 stay pinned)."""
import time
from rcalab.evaluation import ScenarioConfig, run_scenario
from rcalab.model import ModelConfig
from rcalab.prior import desk_prior
from rcalab.training import TrainConfig, train

mc = ModelConfig(d=32, n_blocks=2, heads=4, mlp_hidden=128, dropout=0.05,
                 k_max=5, dtype="float32")
tc = TrainConfig(lr=1e-3, episodes_per_epoch=8000, epochs=1, n_q=4, seed=42)
t0 = time.time()
store, history = train(desk_prior(pad_to=5), tc, mc)
print(f"heads=4 mlp=128: trained in {(time.time()-t0)/60:.1f} min, "
      f"final-500 loss {sum(h[2] for h in history[-500:])/500:.4f}", flush=True)
for topo in ("two_node_nonidentifiable", "two_node_identifiable", "mediator", "confounder"):
    cfg = ScenarioConfig(topology=topo, mechanism="linear", trials=100,
                         n_obs_grid=(100,), n_int_grid=(10,), pad_to=5, seed=55)
    tab = run_scenario(cfg, ["prim"], store=store)
    print(f"  {topo}: recall@1 {tab.rows[0]['mean']:.3f}", flush=True)
