import numpy as np
import pytest

from rcalab.factory import (
    FactoryConfig,
    HOP_ATTENUATION,
    FAULT_SIGMA_MULT,
    sample_factory_scenario,
    time_ramp,
    _hop_distances,
)
from rcalab.prior import Dag
from rcalab.rng import substream


def test_ramp_zero_mean_and_scaling():
    ramp = time_ramp(100, k_real=10, pad_to=20)
    assert abs(ramp.mean()) < 1e-9
    assert ramp[0] == pytest.approx(-2.0)
    assert ramp[-1] == pytest.approx(2.0)


def test_hop_distances():
    dag = Dag(k=4, parents=((), (0,), (1,), ()))
    d = _hop_distances(dag, (0,))
    assert d == {0: 0, 1: 1, 2: 2}


def test_fault_magnitude_at_hops():
    assert FAULT_SIGMA_MULT * HOP_ATTENUATION ** 0 == pytest.approx(15.0)
    assert FAULT_SIGMA_MULT * HOP_ATTENUATION ** 2 == pytest.approx(1.35)


def test_scenario_shape_and_invariants():
    rng = substream(0, "factory")
    cfg = FactoryConfig()
    for i in range(30):
        ep = sample_factory_scenario(rng, cfg, seed=i)
        ep.validate()
        assert 1 <= len(ep.targets) <= 3
        # ramp occupies the last real column and spans the clip range
        ramp_col = np.concatenate([ep.obs[:, ep.k_real - 1], ep.int_[:, ep.k_real - 1]])
        assert abs(ramp_col.mean()) < 1e-9


def test_root_cause_column_shifts_by_15_sigma():
    rng = substream(1, "mag")
    cfg = FactoryConfig(k_range=(6, 6), pad_to=10, fault_count_probs=(1.0, 0.0, 0.0),
                        hop_delay_range=(0, 0), binary_frac=0.0,
                        t_obs=400, t_int=400)
    ep = sample_factory_scenario(rng, cfg)
    t = ep.targets[0]
    scale = cfg.pad_to / 6
    # AR(1) stationary std is sigma / sqrt(1 - 0.95^2) ~ 3.2 sigma, and the
    # post-normalisation shift of 15 sigma / (3.2 sigma) ~ 4.68 pre-clip
    delta = ep.int_[:, t].mean() / scale - ep.obs[:, t].mean() / scale
    assert abs(delta) > 2.0


def test_multi_fault_counts_follow_probs():
    rng = substream(2, "counts")
    cfg = FactoryConfig(k_range=(8, 12), pad_to=16)
    counts = {1: 0, 2: 0, 3: 0}
    n = 600
    for _ in range(n):
        ep = sample_factory_scenario(rng, cfg)
        counts[len(ep.targets)] += 1
    assert counts[1] / n == pytest.approx(0.70, abs=0.07)
    assert counts[2] / n == pytest.approx(0.20, abs=0.06)
    assert counts[3] / n == pytest.approx(0.10, abs=0.05)


def test_alarm_mask_on_real_nodes_only():
    rng = substream(3, "alarm")
    cfg = FactoryConfig()
    for _ in range(40):
        ep = sample_factory_scenario(rng, cfg)
        assert ep.mask.any()
        assert not ep.mask[ep.k_real:].any()


def test_config_validation():
    with pytest.raises(ValueError):
        FactoryConfig(k_range=(8, 16), pad_to=16)
    with pytest.raises(ValueError):
        FactoryConfig(fault_count_probs=(0.5, 0.2, 0.2))
