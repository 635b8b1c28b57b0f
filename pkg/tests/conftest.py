import hashlib
import json
import os
import pathlib
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from rcalab.model import ModelConfig, ParameterStore
from rcalab.prior import desk_prior
from rcalab.training import TrainConfig, train

CACHE_DIR = pathlib.Path(os.environ.get(
    "RCALAB_TEST_CACHE", pathlib.Path(__file__).parent / "_cache"))

# the desk-scale configuration shared by the acceptance criteria
DESK_MODEL = dict(d=32, n_blocks=2, heads=4, mlp_hidden=128, dropout=0.1,
                  k_max=5, dtype="float32")
DESK_TRAIN = dict(lr=1e-3, weight_decay=0.01, episodes_per_epoch=20_000,
                  epochs=1, n_q=4, seed=42)


def _cache_key(*dicts) -> str:
    blob = json.dumps(dicts, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@pytest.fixture(scope="session")
def desk_checkpoint():
    """PRIM-tiny trained on 20k two-family prior episodes.

    Training is deterministic in (seed, configs); the checkpoint is cached
    on disk so repeated test runs skip the ~15 minute training.
    """
    prior = desk_prior(pad_to=5)
    key = _cache_key(DESK_MODEL, DESK_TRAIN,
                     {"prior": "desk", "pad_to": 5})
    path = CACHE_DIR / f"desk_{key}.rckp"
    if path.exists():
        return ParameterStore.load(path)
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    store, _ = train(prior, TrainConfig(**DESK_TRAIN), ModelConfig(**DESK_MODEL))
    store.save(path)
    return store
