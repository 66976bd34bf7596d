import numpy as np
import pytest

from motionudf import kinematics as kin
from motionudf.energy import energy_motion
from motionudf.errors import ValidationError
from motionudf.motion import MotionSequence, synthesize_motion
from motionudf.optimize import EnergyConfig
from motionudf.tasks import (denoise, fit_partial, generate, inbetween, interpolate_gaps, parse_frames,
                             random_pose_sequence, smooth)

from conftest import random_model


@pytest.fixture(scope="module")
def model16():
    return random_model(T=16)


@pytest.fixture(scope="module")
def walk():
    return synthesize_motion("walk-cycle", 20, seed=5)


def test_parse_frames():
    assert parse_frames("0-5,15") == [0, 1, 2, 3, 4, 5, 15]
    assert parse_frames(" 3, 1,1 ,") == [1, 3]


def test_linear_gap_fill_by_hand():
    pos = np.zeros((5, 2, 3))
    pos[4, 1] = [4.0, 0, 0]
    seq = MotionSequence(fps=30, joints=["a", "b"], positions=pos)
    out = interpolate_gaps(seq, [0, 4])
    np.testing.assert_allclose(out.positions[:, 1, 0], [0, 1, 2, 3, 4])


def test_rotation_gap_fill(walk):
    keys = parse_frames("0-5,15")
    clip = walk.replace(positions=walk.positions[:16].copy(), rotations=walk.rotations[:16].copy())
    out = interpolate_gaps(clip, keys)
    assert out.positions[keys].tobytes() == clip.positions[keys].tobytes()
    # the filled frames are proper poses of the same skeleton
    fk = kin.forward_kinematics(kin.default_skeleton(), out.rotations)
    np.testing.assert_allclose(fk, out.positions, atol=1e-12)
    with pytest.raises(ValidationError):
        interpolate_gaps(clip, [3])


def test_inbetween_keeps_key_frames_and_lowers_energy(model16, walk):
    clip = walk.replace(positions=walk.positions[2:18].copy(), rotations=walk.rotations[2:18].copy())
    keys = parse_frames("0-5,15")
    cfg = EnergyConfig(mode="motion-only", lambda_obs=0, iterations=20, lr=1e-3)
    res, base = inbetween(model16, clip, keys, cfg)
    out = res.sequence
    assert out.positions[keys].tobytes() == clip.positions[keys].tobytes()
    assert out.rotations[keys].tobytes() == clip.rotations[keys].tobytes()
    assert energy_motion(model16, out.positions) < energy_motion(model16, base.positions)


def test_generate_lowers_energy(model16):
    cfg = EnergyConfig(mode="motion-only", lambda_obs=0, iterations=20, lr=1e-3)
    res, init = generate(model16, 16, seed=2, cfg=cfg)
    res.sequence.validate()
    assert res.sequence.num_frames == 16
    assert energy_motion(model16, res.sequence.positions) < energy_motion(model16, init.positions)
    again = random_pose_sequence(16, seed=2)
    assert again == init


def test_denoise_fit_and_smooth_shapes(model16, walk):
    cfg = EnergyConfig(iterations=3)
    assert denoise(model16, walk, cfg).sequence.positions.shape == walk.positions.shape
    mask = np.zeros(walk.positions.shape[:2], bool)
    mask[:, 20:] = True
    assert fit_partial(model16, walk, mask, cfg).sequence.num_frames == 20
    assert smooth(model16, walk, cfg).sequence.num_frames == 20
