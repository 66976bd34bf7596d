"""Downstream uses of a trained prior: denoising, fitting to partial
observations, jitter smoothing, in-betweening and generation."""
import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from . import kinematics as kin
from .energy import Observation
from .errors import ValidationError
from .motion import MotionSequence, synthetic_suite
from .optimize import EnergyConfig, optimize_sequence, sliding_window_optimize


# energy settings used when the caller gives none
INBETWEEN_DEFAULTS = dict(mode="fusion", lambda_obs=0.0, lambda_prior=1.0, lr=1e-3)
GENERATE_DEFAULTS = dict(mode="motion-only", lambda_obs=0.0, lambda_prior=1.0)


def denoise(model, noisy, cfg=None, skeleton=None):
    """Pull a noisy sequence towards the prior while staying close to it."""
    return optimize_sequence(model, noisy, Observation(noisy.positions), cfg, skeleton)


def fit_partial(model, observed, mask, cfg=None, skeleton=None):
    """Like :func:`denoise`, but (frame, joint) entries flagged in ``mask``
    are left out of the observation term."""
    return optimize_sequence(model, observed, Observation(observed.positions, mask), cfg, skeleton)


def smooth(model, seq, cfg=None, skeleton=None):
    """Sliding-window refinement of an estimator's jittery output."""
    return sliding_window_optimize(model, seq, cfg, Observation(seq.positions), skeleton)


def parse_frames(spec):
    """'0-5,15' -> [0, 1, 2, 3, 4, 5, 15]."""
    out = []
    for part in str(spec).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return sorted(set(out))


def interpolate_gaps(seq, keyframes, skeleton=None):
    """Fill every non-key frame from the surrounding key frames.

    With rotations: per-joint slerp of local rotations plus linear root
    position, re-posed through forward kinematics. Without: linear joint
    positions."""
    keys = np.asarray(sorted(set(int(k) for k in keyframes)))
    F = seq.num_frames
    if keys.size < 2 or keys[0] != 0 or keys[-1] != F - 1:
        if keys.size < 2 or keys.min() < 0 or keys.max() >= F:
            raise ValidationError("need at least two key frames inside the sequence")
    t = np.arange(F, dtype=np.float64)
    tq = np.clip(t, keys[0], keys[-1])
    if seq.rotations is None:
        pos = np.empty_like(seq.positions)
        for j in range(seq.num_joints):
            for c in range(3):
                pos[:, j, c] = np.interp(tq, keys, seq.positions[keys, j, c])
        return seq.replace(positions=pos)
    skel = skeleton or kin.default_skeleton()
    rots = np.empty_like(seq.rotations)
    for j in range(seq.num_joints):
        slerp = Slerp(keys.astype(np.float64), Rotation.from_rotvec(seq.rotations[keys, j]))
        rots[:, j] = slerp(tq).as_rotvec()
    root = np.stack([np.interp(tq, keys, seq.positions[keys, 0, c]) for c in range(3)], axis=1)
    pos = kin.forward_kinematics(skel, rots, root_translation=root)
    # key frames keep their exact input values
    pos[keys] = seq.positions[keys]
    rots[keys] = seq.rotations[keys]
    return seq.replace(positions=pos, rotations=rots)


def inbetween(model, seq, keyframes, cfg=None, skeleton=None):
    """Interpolate the gaps, then refine them under the prior with the key
    frames frozen. Returns (result, interpolated baseline)."""
    cfg = cfg or EnergyConfig(**INBETWEEN_DEFAULTS)
    base = interpolate_gaps(seq, keyframes, skeleton)
    result = optimize_sequence(model, base, None, cfg, skeleton, freeze=keyframes)
    return result, base


def random_pose_sequence(n_poses=16, fps=30, seed=0, skeleton=None):
    """A chaotic sequence of ``n_poses`` poses drawn from random frames of
    synthetic clips."""
    skel = skeleton or kin.default_skeleton()
    rng = np.random.default_rng(seed)
    pool = synthetic_suite(8, 64, fps, seed=int(rng.integers(2**63 - 1)))
    rots = np.stack([pool[rng.integers(len(pool))].rotations[rng.integers(64)] for _ in range(n_poses)])
    return MotionSequence(fps=fps, joints=skel.names, positions=kin.forward_kinematics(skel, rots),
                          rotations=rots)


def generate(model, n_poses=16, seed=0, cfg=None, skeleton=None):
    """Turn a random pose sequence into motion by minimizing the prior alone.
    Returns (result, initial sequence)."""
    cfg = cfg or EnergyConfig(**GENERATE_DEFAULTS)
    init = random_pose_sequence(n_poses, model.fps, seed, skeleton)
    return optimize_sequence(model, init, None, cfg, skeleton), init
