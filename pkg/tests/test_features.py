import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbrtwin.coresim.stepper import DischargeBatch
from pbrtwin.features import (
    DEPENDENT_FEATURE_NAMES,
    FEATURE_NAMES,
    FeatureExtractor,
    FeatureVector,
    NoisePolicy,
    apply_noise,
    bin_burnups,
    radial_lastpass_burnup,
    sigma_from_mape,
    summary_features,
)


def make_batch(zones, discarded=0.0, step=1):
    return DischargeBatch(
        step_index=step,
        fuel_by_radial=zones,
        graphite_count=0.0,
        discarded_count=discarded,
        graphite_removed=0.0,
        discard_mean_burnup=0.0,
    )


def make_features(**overrides):
    base = dict(
        graphite_fraction=0.1,
        power=280_000.0,
        rod_depth=100.0,
        timestep=6.525,
        discard_threshold=19.149,
        power_per_pebble=1.2,
        lastpass=np.array([1.0, 2.0, 3.0, 4.0]),
        burnup_bins=np.array([10.0, 20, 30, 40, 50, 60, 70, 80, 90]),
        avg_discharge_burnup=10.0,
        discarded_count=1234.0,
    )
    base.update(overrides)
    return FeatureVector(**base)


def test_feature_vector_layout():
    assert len(FEATURE_NAMES) == 21
    assert len(DEPENDENT_FEATURE_NAMES) == 15
    fv = make_features()
    arr = fv.to_array()
    assert arr.shape == (21,)
    back = FeatureVector.from_array(arr)
    assert np.array_equal(back.to_array(), arr)


# ---------------------------------------------------------------- last-pass burnup


def test_radial_lastpass_single_group_identity():
    batch = make_batch([[(5.0, 2.5, 10.0)], [(1.0, 1.5, 8.0)], [], []])
    out = radial_lastpass_burnup(batch, np.array([0.0, 0.0, 7.7, 0.0]))
    assert out[0] == 2.5
    assert out[1] == 1.5
    assert out[2] == 7.7  # carried forward
    assert out[3] == 0.0


def test_radial_lastpass_equal_weight_mean():
    batch = make_batch([[(2.0, 1.0, 5.0), (2.0, 3.0, 6.0)], [], [], []])
    out = radial_lastpass_burnup(batch)
    assert out[0] == pytest.approx(2.0, rel=1e-12)


def test_radial_lastpass_weighted_mean():
    batch = make_batch([[(1.0, 10.0, 12.0), (9.0, 0.0, 2.0)], [], [], []])
    out = radial_lastpass_burnup(batch)
    assert out[0] == pytest.approx(1.0, rel=1e-12)


# ---------------------------------------------------------------- burnup bins


def test_bin_burnups_all_fresh():
    batch = make_batch([[(100.0, 0.0, 0.0)], [], [], []])
    counts = bin_burnups(batch)
    assert counts[0] == 100.0
    assert counts[1:].sum() == 0.0


def test_bin_burnups_assignment():
    batch = make_batch(
        [[(1.0, 0, 1.0), (1.0, 0, 3.0), (1.0, 0, 22.49), (1.0, 0, 30.0)], [], [], []]
    )
    counts = bin_burnups(batch)
    assert counts[0] == 1.0   # 1.0 in [0, 2.5)
    assert counts[1] == 1.0   # 3.0 in [2.5, 5)
    assert counts[8] == 2.0   # 22.49 and the 30.0 overflow both in bin 9
    assert counts.sum() == 4.0


def test_bin_burnups_empty():
    counts = bin_burnups(make_batch([[], [], [], []]))
    assert np.all(counts == 0.0)


@given(data=st.data())
@settings(max_examples=40)
def test_bin_counts_conserve_discharge(data):
    zones = []
    for _ in range(4):
        n = data.draw(st.integers(0, 6))
        zones.append(
            [
                (
                    data.draw(st.floats(0.25, 500.0)),
                    data.draw(st.floats(0.0, 5.0)),
                    data.draw(st.floats(0.0, 40.0)),
                )
                for _ in range(n)
            ]
        )
    batch = make_batch(zones)
    counts = bin_burnups(batch)
    assert counts.sum() == pytest.approx(batch.fuel_count(), rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------- summary


def test_summary_uniform_and_weighted():
    batch = make_batch([[(3.0, 0, 7.0)], [(2.0, 0, 7.0)], [], []])
    avg, d = summary_features(batch)
    assert avg == pytest.approx(7.0, rel=1e-12)
    batch = make_batch([[(1.0, 0, 10.0), (1.0, 0, 20.0)], [], [], []], discarded=1234.0)
    avg, d = summary_features(batch)
    assert avg == pytest.approx(15.0, rel=1e-12)
    assert d == 1234.0


def test_summary_empty_carries_forward():
    avg, d = summary_features(make_batch([[], [], [], []]), previous_avg=9.5)
    assert avg == 9.5
    assert d == 0.0


# ---------------------------------------------------------------- noise


def test_sigma_from_mape_values():
    assert sigma_from_mape(0.0) == 0.0
    assert sigma_from_mape(10.0) == pytest.approx(0.1253314137, abs=1e-9)


def test_apply_noise_zero_mape_identity():
    fv = make_features()
    policy = NoisePolicy(0.0, 0.0, 0.0, 0.0, seed=1)
    noisy = apply_noise(fv, policy, step_index=3)
    assert np.array_equal(noisy.to_array(), fv.to_array())


def test_apply_noise_touches_only_dependents():
    fv = make_features()
    noisy = apply_noise(fv, NoisePolicy(seed=2), step_index=5)
    arr0, arr1 = fv.to_array(), noisy.to_array()
    assert np.array_equal(arr0[:6], arr1[:6])  # controls + power per pebble
    assert not np.array_equal(arr0[6:], arr1[6:])
    assert np.all(arr1 >= 0.0)


def test_apply_noise_deterministic_under_seed():
    fv = make_features()
    a = apply_noise(fv, NoisePolicy(seed=7), step_index=11).to_array()
    b = apply_noise(fv, NoisePolicy(seed=7), step_index=11).to_array()
    c = apply_noise(fv, NoisePolicy(seed=8), step_index=11).to_array()
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_folded_normal_mean_identity():
    # E|eps| must converge to MAPE/100; checked at 3 sigma of the MC error
    mape = 5.0
    sigma = sigma_from_mape(mape)
    rng = np.random.default_rng(123)
    eps = sigma * rng.standard_normal(1_000_000)
    emp = np.abs(eps).mean()
    mc_sigma = np.abs(eps).std() / math.sqrt(len(eps))
    assert abs(emp - mape / 100.0) < 3 * mc_sigma + 1e-4


def test_empirical_relative_error_after_noise():
    fv = make_features()
    policy = NoisePolicy(seed=3)
    rel = []
    for step in range(4000):
        noisy = apply_noise(fv, policy, step_index=step)
        rel.append(
            abs(noisy.avg_discharge_burnup - fv.avg_discharge_burnup)
            / fv.avg_discharge_burnup
        )
    assert np.mean(rel) == pytest.approx(policy.mape_avg_discharge / 100.0, rel=0.08)


def test_noise_policy_rejects_negative():
    with pytest.raises(ValueError):
        NoisePolicy(mape_burnup_bins=-1.0)


# ---------------------------------------------------------------- extractor


def test_extractor_carries_state_and_power_per_pebble():
    from pbrtwin.coresim import ControlVector

    ex = FeatureExtractor()
    controls = ControlVector(0.0, 100_000.0, 60.25, 6.525, 19.149)
    batch1 = make_batch([[(10.0, 1.0, 5.0)], [], [], []], discarded=3.0)
    fv1 = ex.extract(controls, batch1, fuel_count=200_000.0)
    assert fv1.power_per_pebble == pytest.approx(0.5)
    assert fv1.lastpass[0] == 1.0
    batch2 = make_batch([[], [], [], []])
    fv2 = ex.extract(controls, batch2, fuel_count=200_000.0)
    assert fv2.lastpass[0] == 1.0  # carried
    assert fv2.avg_discharge_burnup == fv1.avg_discharge_burnup
    assert fv2.discarded_count == 0.0
