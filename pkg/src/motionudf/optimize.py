"""Gradient-based refinement of motion sequences under the learned prior.

Sequences are optimized either through forward kinematics on per-joint
rotations (root position pinned to its input trajectory) or directly on
joint positions (root joint frozen). Sliding-window mode optimizes every
stride-1 window as an independent problem and merges the per-frame results
with a normalized kernel.
"""
import csv
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import kinematics as kin
from . import rotations as rot
from .energy import (Observation, energy_motion_grad, fusion_temporal_factors,
                     energy_observation_grad, energy_temporal_grad, mean_displacement)
from .errors import ConfigError, NumericalError, SegmentLengthError, ValidationError
from .optim import Adam

MODES = ("temporal-only", "motion-only", "fusion")
KERNELS = ("triangular", "uniform")
SPACES = ("auto", "rotations", "positions")


@dataclass
class EnergyConfig:
    lambda_obs: float = 1.0
    lambda_prior: float = 1.0
    # pose-prior weight; no pose prior is implemented so it must stay 0
    lambda_pose: float = 0.0
    mode: str = "fusion"
    rotation: str = "6d"
    space: str = "auto"
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 300
    window: int = 16
    stride: int = 1
    kernel: str = "triangular"
    ema_factor: float = 1.0
    freeze_frames: tuple = ()

    def __post_init__(self):
        if self.lambda_obs < 0 or self.lambda_prior < 0:
            raise ValidationError("energy weights must be non-negative")
        if self.lambda_pose != 0:
            raise ConfigError("lambda_pose must be 0: no per-frame pose prior is available")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.rotation not in kin.ROTATION_SIZES:
            raise ConfigError(f"rotation must be one of {tuple(kin.ROTATION_SIZES)}")
        if self.space not in SPACES:
            raise ConfigError(f"space must be one of {SPACES}")
        if self.kernel not in KERNELS:
            raise ConfigError(f"kernel must be one of {KERNELS}")
        if self.window < 5:
            raise ValidationError("window length must be >= 5")
        if self.stride != 1:
            raise ConfigError("only stride 1 is supported")
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")
        if not 0.0 < self.ema_factor <= 1.0:
            raise ValidationError("ema_factor must lie in (0, 1]")
        self.freeze_frames = tuple(int(f) for f in self.freeze_frames)

    def to_dict(self):
        d = asdict(self)
        d["freeze_frames"] = list(d["freeze_frames"])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown energy config keys: {sorted(unknown)}")
        return cls(**d)


def load_energy_config(path, **overrides):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed config ({exc})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    d.update({k: v for k, v in overrides.items() if v is not None})
    return EnergyConfig.from_dict(d)


LOG_COLUMNS = ("iter", "E_obs", "E_motion", "E_temporal", "total", "displacement")


@dataclass
class OptimizationResult:
    sequence: object
    log: list = field(default_factory=list)

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for row in self.log:
                w.writerow(["" if row[c] is None else (row[c] if c == "iter" else repr(row[c]))
                            for c in LOG_COLUMNS])


def _check_finite(name, value):
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {name} energy ({value})")


def objective(model, cfg, pos, obs=None):
    """Total energy, its parts, and d total / d positions."""
    g = np.zeros_like(pos)
    parts = {"E_obs": None, "E_motion": None}
    total = 0.0
    if obs is not None and cfg.lambda_obs > 0:
        e, ge = energy_observation_grad(pos, obs)
        _check_finite("observation", e)
        parts["E_obs"] = e
        total += cfg.lambda_obs * e
        g += cfg.lambda_obs * ge
    et, gt = energy_temporal_grad(pos)
    _check_finite("temporal", et)
    parts["E_temporal"] = et
    if cfg.lambda_prior > 0:
        if cfg.mode == "temporal-only":
            e, gp = et, gt
        else:
            if model is None:
                raise ValidationError(f"{cfg.mode} mode needs a trained model")
            em, gp = energy_motion_grad(model, pos)
            _check_finite("motion", em)
            e = em
            if cfg.mode == "fusion":
                ef, gf = energy_temporal_grad(pos, fusion_temporal_factors(model))
                e, gp = em + ef, gp + gf
            _check_finite(cfg.mode, e)
            parts["E_motion"] = em
        total += cfg.lambda_prior * e
        g += cfg.lambda_prior * gp
    _check_finite("total", total)
    parts["total"] = total
    return total, parts, g


class _RotationSpace:
    def __init__(self, skel, kind, root):
        self.skel, self.kind, self.root = skel, kind, root

    def decode(self, x):
        shape = x.shape
        flat = x.reshape((-1,) + shape[-2:])
        pos = kin.forward_kinematics(self.skel, kin.PoseParams(flat, self.kind),
                                     root_translation=self.root.reshape(-1, 3))
        return pos.reshape(shape[:-1] + (3,))

    def grad(self, x, gpos):
        shape = x.shape
        g = kin.fk_vjp(self.skel, kin.PoseParams(x.reshape((-1,) + shape[-2:]), self.kind),
                       gpos.reshape((-1,) + gpos.shape[-2:]))
        return g.reshape(shape)


class _PositionSpace:
    def decode(self, x):
        return x

    def grad(self, x, gpos):
        return gpos


def _descend(space, x0, frozen, model, cfg, obs):
    x = x0.copy()
    opt = Adam([x], lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, frozen=[frozen])
    log = []
    for it in range(cfg.iterations + 1):
        pos = space.decode(x)
        _, parts, gpos = objective(model, cfg, pos, obs)
        parts["iter"] = it
        parts["displacement"] = mean_displacement(pos)
        log.append(parts)
        if it == cfg.iterations:
            break
        opt.step([space.grad(x, gpos)])
    return x, pos, log


def _resolve_space(seq, cfg, skeleton):
    if cfg.space == "positions":
        return "positions", None
    if seq.rotations is None:
        if cfg.space == "rotations":
            raise ValidationError("rotation-space optimization needs input rotations")
        return "positions", None
    skel = skeleton
    if skel is None:
        default = kin.default_skeleton()
        if tuple(default.names) == tuple(seq.joints):
            skel = default
    if skel is None:
        if cfg.space == "rotations":
            raise ValidationError("rotation-space optimization needs a skeleton")
        return "positions", None
    if skel.num_joints != seq.num_joints:
        raise ValidationError("skeleton does not match the sequence's joint count")
    if seq.root_index != 0:
        raise ValidationError("rotation-space optimization expects the root at joint 0")
    return "rotations", skel


def _freeze_frames(cfg, F, freeze):
    frames = cfg.freeze_frames if freeze is None else tuple(int(f) for f in freeze)
    mask = np.zeros(F, dtype=bool)
    for f in frames:
        if not 0 <= f < F:
            raise ValidationError(f"freeze frame {f} outside [0, {F})")
        mask[f] = True
    return mask


def _check_model(model, seq, cfg):
    if model is not None and cfg.mode != "temporal-only":
        model.check_compatible(fps=seq.fps)


def _setup(seq, cfg, skeleton, freeze):
    kind, skel = _resolve_space(seq, cfg, skeleton)
    F = seq.num_frames
    frozen_frames = _freeze_frames(cfg, F, freeze)
    if kind == "rotations":
        x = kin.PoseParams(seq.rotations).to_kind(cfg.rotation).values.copy()
        space = _RotationSpace(skel, cfg.rotation, seq.positions[:, 0].copy())
        frozen = np.broadcast_to(frozen_frames[:, None, None], x.shape).copy()
    else:
        x = seq.positions.copy()
        space = _PositionSpace()
        frozen = np.broadcast_to(frozen_frames[:, None, None], x.shape).copy()
        frozen[:, seq.root_index] = True
    return kind, skel, space, x, frozen, frozen_frames


def _finish(seq, kind, skel, cfg, x, pos, frozen_frames):
    if kind == "rotations":
        rots = kin.PoseParams(x, cfg.rotation).to_kind("axis-angle").values
        if cfg.ema_factor < 1.0:
            rots[:, 0] = ema_smooth_orientation(rots[:, 0], cfg.ema_factor)
            pos = kin.forward_kinematics(skel, rots, root_translation=seq.positions[:, 0])
        rots[frozen_frames] = seq.rotations[frozen_frames]
    else:
        rots = None
    pos = np.array(pos)
    pos[frozen_frames] = seq.positions[frozen_frames]
    return seq.replace(positions=pos, rotations=rots)


def optimize_sequence(model, init, obs=None, cfg=None, skeleton=None, freeze=None):
    """Minimize ``lambda_obs * E_obs + lambda_prior * E_mode`` over the whole
    sequence with Adam. Frames listed in ``freeze`` (or ``cfg.freeze_frames``)
    receive no updates and are returned bit-identical."""
    cfg = cfg or EnergyConfig()
    _check_model(model, init, cfg)
    if model is not None and cfg.mode != "temporal-only" and init.num_frames < model.T:
        raise SegmentLengthError(f"sequence has {init.num_frames} frames, model needs {model.T}")
    if obs is not None and obs.targets.shape != init.positions.shape:
        raise ValidationError("observation shape does not match the sequence")
    kind, skel, space, x, frozen, frozen_frames = _setup(init, cfg, skeleton, freeze)
    x, pos, log = _descend(space, x, frozen, model, cfg, obs)
    return OptimizationResult(_finish(init, kind, skel, cfg, x, pos, frozen_frames), log)


# --------------------------------------------------------------------------
# sliding windows

def window_kernel(L, kernel="triangular"):
    if kernel == "triangular":
        j = np.arange(L)
        return np.minimum(j + 1, L - j).astype(np.float64)
    if kernel == "uniform":
        return np.ones(L)
    raise ConfigError(f"unknown kernel {kernel!r}")


def merge_weights(F, L, kernel="triangular"):
    """(W, L) per-window weights, normalized so each frame's weights sum to 1."""
    if F < L:
        raise SegmentLengthError(f"sequence has {F} frames, window length is {L}")
    W = F - L + 1
    k = window_kernel(L, kernel)
    total = np.zeros(F)
    for w in range(W):
        total[w:w + L] += k
    return np.stack([k / total[w:w + L] for w in range(W)])


def merge_windows(results, F, kernel="triangular"):
    """Blend per-window results (W, L, ...) into per-frame values (F, ...).

    Written as ``ref + Σ_w a_w (x_w − ref)`` with ``ref`` the first covering
    window's value, so frames on which all windows agree come out exactly."""
    results = np.asarray(results, dtype=np.float64)
    W, L = results.shape[:2]
    if F != W + L - 1:
        raise ValidationError(f"{W} windows of length {L} do not cover {F} frames")
    a = merge_weights(F, L, kernel)
    ref = np.empty((F,) + results.shape[2:])
    ref[:W] = results[:, 0]
    ref[W:] = results[W - 1, 1:]
    out = ref.copy()
    extra = (1,) * (results.ndim - 2)
    for w in range(W):
        out[w:w + L] += a[w].reshape((L,) + extra) * (results[w] - ref[w:w + L])
    return out


def sliding_window_optimize(model, seq, cfg=None, obs=None, skeleton=None, freeze=None):
    """Optimize every stride-1 window of length ``cfg.window`` on its own and
    merge the per-frame results. The windows are independent problems; they
    are stepped together as one batch, which leaves each window's Adam
    trajectory unchanged since all updates are elementwise."""
    cfg = cfg or EnergyConfig()
    L, F = cfg.window, seq.num_frames
    if F < L:
        raise SegmentLengthError(f"sequence has {F} frames, window length is {L}")
    _check_model(model, seq, cfg)
    if model is not None and cfg.mode != "temporal-only" and model.T != L:
        raise SegmentLengthError(f"window length {L} does not match the model's {model.T}")
    kind, skel, space, x, frozen, frozen_frames = _setup(seq, cfg, skeleton, freeze)
    W = F - L + 1
    idx = np.arange(W)[:, None] + np.arange(L)[None, :]
    xw, fw = x[idx], frozen[idx]
    if kind == "rotations":
        space = _RotationSpace(skel, cfg.rotation, space.root[idx])
    obs_w = None
    if obs is not None:
        if obs.targets.shape != seq.positions.shape:
            raise ValidationError("observation shape does not match the sequence")
        obs_w = Observation(obs.targets[idx], obs.mask[idx])
    xw, posw, log = _descend(space, xw, fw, model, cfg, obs_w)
    if kind == "rotations":
        merged = merge_windows(xw, F, cfg.kernel)
        pos = kin.forward_kinematics(skel, kin.PoseParams(merged, cfg.rotation),
                                     root_translation=seq.positions[:, 0])
    else:
        merged = merge_windows(posw, F, cfg.kernel)
        pos = merged
    return OptimizationResult(_finish(seq, kind, skel, cfg, merged, pos, frozen_frames), log)


# --------------------------------------------------------------------------
# root orientation smoothing

def ema_smooth_orientation(rotations, factor):
    """Exponential moving average of per-frame rotations in the 6D embedding,
    re-orthonormalized each frame. Accepts axis-angle (F, 3) or matrices
    (F, 3, 3) and returns the same form. ``factor`` weights the current frame."""
    r = np.asarray(rotations, dtype=np.float64)
    if not 0.0 < factor <= 1.0:
        raise ValidationError("factor must lie in (0, 1]")
    if factor == 1.0:
        return r.copy()
    as_matrix = r.ndim == 3
    x = rot.matrix_to_sixd(r if as_matrix else rot.axis_angle_to_matrix(r))
    s = np.empty_like(x)
    s[0] = x[0]
    for t in range(1, len(x)):
        s[t] = factor * x[t] + (1.0 - factor) * s[t - 1]
    R = rot.sixd_to_matrix(s, where=lambda i: f"frame {i}")
    return R if as_matrix else rot.matrix_to_axis_angle(R)
