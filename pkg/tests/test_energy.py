import numpy as np
import pytest

from motionudf.energy import (Observation, energy_fusion, energy_fusion_grad, energy_motion, energy_motion_grad,
                              energy_observation, energy_observation_grad, energy_temporal, energy_temporal_grad,
                              field_per_window, fusion_temporal_factors, mean_displacement, motion_field)
from motionudf.errors import SegmentLengthError, ValidationError
from motionudf.manifold import all_accelerations, sliding_windows
from motionudf.udf import udf_forward

from conftest import central_diff, max_rel_err


@pytest.fixture
def seq(rng):
    t = np.arange(11.0)[:, None, None]
    return rng.normal(0, 0.2, (1, 24, 3)) + 0.03 * np.sin(t + rng.uniform(0, 6, (1, 24, 3)))


def test_motion_field_by_hand(tiny_model, seq):
    seg = seq[:tiny_model.T]
    acc = all_accelerations(seg)
    w = tiny_model.weights.weights
    expect = sum(w[j] * udf_forward(tiny_model.nets[j], acc[j]) for j in tiny_model.joints)
    assert np.isclose(motion_field(tiny_model, seg), expect, rtol=1e-13)
    with pytest.raises(SegmentLengthError):
        motion_field(tiny_model, seq)


def test_motion_energy_is_window_mean(tiny_model, seq):
    wins = sliding_windows(seq, tiny_model.T)
    expect = np.mean([motion_field(tiny_model, w) for w in wins])
    assert np.isclose(energy_motion(tiny_model, seq), expect, rtol=1e-13)
    assert np.isclose(energy_motion_grad(tiny_model, seq)[0], expect, rtol=1e-13)
    np.testing.assert_allclose(field_per_window(tiny_model, wins), [motion_field(tiny_model, w) for w in wins],
                               rtol=1e-13)


def test_batched_energy_sums_sequences(tiny_model, seq, rng):
    batch = np.stack([seq, seq + rng.normal(0, 0.01, seq.shape)])
    e, g = energy_motion_grad(tiny_model, batch)
    e0, g0 = energy_motion_grad(tiny_model, batch[0])
    e1, g1 = energy_motion_grad(tiny_model, batch[1])
    assert np.isclose(e, e0 + e1, rtol=1e-12)
    np.testing.assert_allclose(g, np.stack([g0, g1]), rtol=1e-12)


def test_temporal_energy_by_hand():
    p = np.zeros((3, 2, 3))
    p[1, 0, 0] = 3.0
    p[1, 0, 1] = 4.0
    assert energy_temporal(p) == 10.0
    assert energy_temporal(p, [0.5, 2.0]) == 5.0
    _, g = energy_temporal_grad(np.zeros((3, 2, 3)))
    np.testing.assert_array_equal(g, 0.0)


def test_fusion_recomposes(tiny_model, seq):
    c = fusion_temporal_factors(tiny_model)
    np.testing.assert_array_equal(c, 1 - tiny_model.weights.weights)
    expect = energy_motion(tiny_model, seq) + energy_temporal(seq, c)
    assert abs(energy_fusion(tiny_model, seq) - expect) <= 1e-12
    assert abs(energy_fusion_grad(tiny_model, seq)[0] - expect) <= 1e-12


def test_observation_masks_entries(seq, rng):
    target = seq + rng.normal(0, 0.1, seq.shape)
    mask = np.zeros(seq.shape[:2], bool)
    mask[3, 5] = mask[7, 0] = True
    obs = Observation(target, mask)
    r = (seq - target) ** 2
    r[mask] = 0
    assert np.isclose(energy_observation(seq, obs), r.sum(), rtol=1e-13)
    _, g = energy_observation_grad(seq, obs)
    np.testing.assert_array_equal(g[mask], 0.0)
    with pytest.raises(ValidationError):
        Observation(target, mask[:, :3])
    with pytest.raises(ValidationError):
        energy_observation(seq[:5], obs)


@pytest.mark.parametrize("name", ["motion", "temporal", "fusion", "observation"])
def test_energy_gradients_match_finite_differences(tiny_model, seq, rng, name):
    obs = Observation(seq + rng.normal(0, 0.05, seq.shape), rng.random(seq.shape[:2]) < 0.2)
    c = rng.uniform(0.2, 1.0, 24)
    fns = {
        "motion": lambda x: energy_motion_grad(tiny_model, x),
        "temporal": lambda x: energy_temporal_grad(x, c),
        "fusion": lambda x: energy_fusion_grad(tiny_model, x),
        "observation": lambda x: energy_observation_grad(x, obs),
    }
    _, g = fns[name](seq)
    num = central_diff(lambda v: fns[name](v)[0], seq)
    assert max_rel_err(g, num) < 1e-4


def test_mean_displacement():
    p = np.zeros((3, 2, 3))
    p[1:, :, 0] = 1.0
    assert mean_displacement(p) == 0.5
