"""Desk-scale training experiment for acceptance calibration."""
import time
from rcalab.model import ModelConfig
from rcalab.prior import desk_prior
from rcalab.training import TrainConfig, train

t0 = time.time()
mc = ModelConfig(d=32, n_blocks=2, heads=2, mlp_hidden=64, dropout=0.1,
                 k_max=5, dtype="float32")
tc = TrainConfig(lr=5e-4, episodes_per_epoch=20_000, epochs=1, n_q=4, seed=42)
store, history = train(desk_prior(pad_to=5), tc, mc, out_dir="exp/desk_run",
                       log_every=1000)
print(f"done in {(time.time()-t0)/60:.1f} min; final-1k loss "
      f"{sum(h[2] for h in history[-1000:])/1000:.4f}")
