"""End-to-end model building: zero-level sets from clean motion, labelled
off-manifold samples from corrupted windows, and per-joint training.

Every joint's job is fully determined by its inputs and a seed derived from
the global seed and the joint index, so the trained model does not depend
on how many worker processes ran the jobs.
"""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kinematics as kin
from .errors import ValidationError
from .manifold import (DEFAULT_CAP, DEFAULT_K, all_accelerations, build_zero_level,
                       label_distances, sliding_windows)
from .motion import DEFAULT_UNIFORM_ROTATION_NOISE, gaussian_sigma
from .udf import ManifoldModel, TrainConfig, TrainHistory, config_dict, train_joint_udf

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    T: int = 16
    stride: int = 1
    cap: int = DEFAULT_CAP
    k: int = DEFAULT_K
    metric: str = "l1"
    # mean joint displacement (m) of Gaussian-noise negatives, drawn log-uniformly
    noise_min: float = 0.002
    noise_max: float = 0.15
    rotation_noise_max: float = DEFAULT_UNIFORM_ROTATION_NOISE
    fine_tune_epochs: int = 0
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self):
        d = asdict(self)
        d["train"] = config_dict(self.train)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        train = TrainConfig(**d.pop("train", {}))
        return cls(train=train, **d)


def full_config(seed=0, T=16):
    return PipelineConfig(T=T, seed=seed, train=TrainConfig(seed=seed))


def desk_config(seed=0, T=16):
    """Narrow nets and a faster learning rate: a full model trains in a few
    minutes on one CPU core."""
    train = TrainConfig(hidden=(64, 64, 64), epochs=100, lr=3e-3, noise_ratio=2.0, seed=seed)
    return PipelineConfig(T=T, seed=seed, train=train)


PRESETS = {"full": full_config, "desk": desk_config}


def _windows_of(sequences, T, stride):
    out = [sliding_windows(s.positions, T)[::stride] for s in sequences if s.num_frames >= T]
    if not out:
        raise ValidationError(f"no sequence has at least {T} frames")
    return np.concatenate(out)


def add_window_noise(windows, noise_min, noise_max, rng):
    """Gaussian position noise on each (T, K, 3) window in order. Each window
    draws its mean displacement log-uniformly in [noise_min, noise_max] and
    perturbs a random subset of its frames; the root joint is left untouched."""
    out = np.array(windows, dtype=np.float64)
    n, T, K = out.shape[:3]
    mags = np.exp(rng.uniform(np.log(noise_min), np.log(noise_max), size=n))
    frac = rng.uniform(0.3, 1.0, size=n)
    hit = rng.random((n, T)) < frac[:, None]
    noise = rng.normal(size=(n, T, K, 3)) * gaussian_sigma(mags)[:, None, None, None]
    noise[:, :, 0] = 0.0
    out += noise * hit[:, :, None, None]
    return out


def gaussian_negative_windows(windows, n, noise_min, noise_max, rng):
    """``n`` noisy copies of randomly chosen clean windows."""
    src = rng.integers(len(windows), size=n)
    return add_window_noise(windows[src], noise_min, noise_max, rng)


def rotation_negative_windows(sequences, T, n, noise_max, rng, skeleton):
    """``n`` windows whose joint rotations got uniform noise of a random
    half-width in (0, noise_max], re-posed through forward kinematics."""
    pool = [(i, s) for i, s in enumerate(sequences) if s.rotations is not None and s.num_frames >= T]
    if not pool:
        raise ValidationError("rotation-noise fine-tuning needs sequences with rotations")
    out = np.empty((n, T, skeleton.num_joints, 3))
    for m in range(n):
        _, s = pool[rng.integers(len(pool))]
        start = rng.integers(s.num_frames - T + 1)
        rots = s.rotations[start:start + T].copy()
        half = rng.uniform(0.0, noise_max)
        rots[:, 1:] += rng.uniform(-half, half, size=rots[:, 1:].shape)
        out[m] = kin.forward_kinematics(skeleton, rots, root_translation=s.positions[start:start + T, 0])
    return out


def _train_one(job):
    (joint, zl, X, d, cfg, X_ft, d_ft, ft_epochs, log_dir) = job
    history = TrainHistory()
    net = train_joint_udf(zl, (X, d), cfg, history=history)
    if ft_epochs > 0 and X_ft is not None:
        ft_cfg = TrainConfig(**{**config_dict(cfg), "epochs": ft_epochs, "seed": cfg.seed + 1})
        ft_hist = TrainHistory()
        net = train_joint_udf(zl, (X_ft, d_ft), ft_cfg, init=net, history=ft_hist)
        history.rows += [(len(history.rows) + r[0],) + tuple(r[1:]) for r in ft_hist.rows]
    if log_dir is not None:
        history.write_csv(os.path.join(log_dir, f"train_joint{joint:02d}.csv"))
    return joint, net


def joint_seed(seed, joint):
    return int(np.random.SeedSequence([int(seed), int(joint)]).generate_state(1)[0])


def prepare_joint_data(sequences, cfg, skeleton=None, joints=None):
    """Zero-level sets and labelled negatives for each joint.

    Returns {joint: (ZeroLevelSet, X, d, X_ft, d_ft)}."""
    skeleton = skeleton or kin.default_skeleton()
    fps = {s.fps for s in sequences}
    if len(fps) != 1:
        raise ValidationError(f"training sequences must share one frame rate, got {sorted(fps)}")
    weights = kin.joint_weights(kin.bone_path_sums(skeleton))
    joints = weights.included if joints is None else list(joints)
    rng = np.random.default_rng(cfg.seed)
    clean = _windows_of(sequences, cfg.T, cfg.stride)
    zls = {j: build_zero_level(sequences, cfg.T, j, cfg.stride, cfg.cap, seed=joint_seed(cfg.seed, j), k=cfg.k)
           for j in joints}
    n_zl = max(zl.size for zl in zls.values())
    n_neg = max(1, int(round(cfg.train.noise_ratio * n_zl)))
    neg_acc = all_accelerations(gaussian_negative_windows(clean, n_neg, cfg.noise_min, cfg.noise_max, rng))
    ft_acc = None
    if cfg.fine_tune_epochs > 0:
        n_ft = max(1, n_neg // 2)
        ft_acc = all_accelerations(rotation_negative_windows(sequences, cfg.T, n_ft, cfg.rotation_noise_max,
                                                             rng, skeleton))
    out = {}
    for j in joints:
        X = neg_acc[:, j]
        d = label_distances(X, zls[j], cfg.k, metric=cfg.metric)
        X_ft = d_ft = None
        if ft_acc is not None:
            X_ft = ft_acc[:, j]
            d_ft = label_distances(X_ft, zls[j], cfg.k, metric=cfg.metric)
        out[j] = (zls[j], X, d, X_ft, d_ft)
    return out, weights


def train_model(sequences, cfg=None, skeleton=None, workers=1, log_dir=None):
    """Train one distance field per non-excluded joint and bundle them."""
    cfg = cfg or PipelineConfig()
    skeleton = skeleton or kin.default_skeleton()
    data, weights = prepare_joint_data(sequences, cfg, skeleton)
    jobs = []
    for j, (zl, X, d, X_ft, d_ft) in data.items():
        jcfg = TrainConfig(**{**config_dict(cfg.train), "seed": joint_seed(cfg.train.seed, j)})
        jobs.append((j, zl, X, d, jcfg, X_ft, d_ft, cfg.fine_tune_epochs, log_dir))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(job) for job in jobs]
    nets = dict(results)
    fps = sequences[0].fps
    return ManifoldModel(nets=nets, weights=weights, T=cfg.T, fps=int(fps), train_config=cfg.to_dict())
