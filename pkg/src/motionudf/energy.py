"""Energy terms over joint positions and their gradients.

All functions take positions shaped (F, K, 3) (or a stack of windows
(W, T, K, 3) where noted) and return plain floats; the ``*_grad`` variants
return ``(value, d value / d positions)``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import SegmentLengthError, ValidationError
from .manifold import acceleration_vjp, all_accelerations
from .motion import MotionSegment, MotionSequence
from .udf import udf_forward, udf_value_and_input_grad


def _positions(x):
    if isinstance(x, (MotionSequence, MotionSegment)):
        return x.positions
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class Observation:
    """Target joint positions and an (F, K) mask, True where the target is missing."""

    targets: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=np.float64)
        if t.ndim < 3 or t.shape[-1] != 3:
            raise ValidationError(f"observation targets must be (F, K, 3), got {t.shape}")
        m = np.zeros(t.shape[:-1], dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if m.shape != t.shape[:-1]:
            raise ValidationError("observation mask must be (F, K)")
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "mask", m)

    def window(self, start, length):
        return Observation(self.targets[start:start + length], self.mask[start:start + length])


# --------------------------------------------------------------------------
# manifold field

def field_per_window(model, windows, grad=False):
    """Weighted field value of each (T, K, 3) window in a (W, T, K, 3) stack.

    Returns values (W,) and, with ``grad``, d values / d windows (W, T, K, 3)."""
    windows = np.asarray(windows, dtype=np.float64)
    W, T = windows.shape[:2]
    model.check_compatible(T=T)
    acc = all_accelerations(windows)  # (W, K, D)
    vals = np.zeros(W)
    g_acc = np.zeros_like(acc) if grad else None
    w = model.weights.weights
    for j in model.joints:
        if grad:
            f, g = udf_value_and_input_grad(model.nets[j], acc[:, j])
            g_acc[:, j] = w[j] * g
        else:
            f = udf_forward(model.nets[j], acc[:, j])
        vals += w[j] * f
    if not grad:
        return vals
    return vals, acceleration_vjp(g_acc, T)


def motion_field(model, segment):
    """Σ_i w_i f_i(acceleration of joint i) for one segment of length ``model.T``."""
    pos = _positions(segment)
    if pos.shape[0] != model.T:
        raise SegmentLengthError(f"segment has {pos.shape[0]} frames, model expects {model.T}")
    return float(field_per_window(model, pos[None])[0])


def _windows(pos, T):
    """Stride-1 windows of (..., F, K, 3) -> (..., W, T, K, 3)."""
    F = pos.shape[-3]
    if F < T:
        raise SegmentLengthError(f"sequence has {F} frames, segment length is {T}")
    win = np.lib.stride_tricks.sliding_window_view(pos, T, axis=-3)  # (..., W, K, 3, T)
    return np.moveaxis(win, -1, -3)


def energy_motion_grad(model, positions):
    """Mean field value over all stride-1 windows, and its gradient.

    A leading batch axis (B, F, K, 3) is treated as independent sequences
    whose energies are summed."""
    pos = _positions(positions)
    T = model.T
    win = _windows(pos, T)
    lead, W = win.shape[:-4], win.shape[-4]
    vals, gw = field_per_window(model, win.reshape((-1,) + win.shape[-3:]), grad=True)
    gw = gw.reshape(lead + (W,) + gw.shape[1:])
    g = np.zeros_like(pos)
    for t in range(T):
        g[..., t:t + W, :, :] += gw[..., :, t, :, :]
    return float(vals.sum() / W), g / W


def energy_motion(model, positions):
    pos = _positions(positions)
    if pos.ndim == 3 and pos.shape[0] == model.T:
        return motion_field(model, pos)
    win = _windows(pos, model.T)
    W = win.shape[-4]
    return float(field_per_window(model, win.reshape((-1,) + win.shape[-3:])).sum() / W)


# --------------------------------------------------------------------------
# temporal and observation terms

def energy_temporal_grad(positions, joint_weights=None):
    """Σ_t Σ_i c_i ‖p_t^i − p_{t−1}^i‖ with per-joint factors ``c`` (default 1).

    The gradient at a zero-length step is taken as 0."""
    pos = _positions(positions)
    d = pos[..., 1:, :, :] - pos[..., :-1, :, :]
    n = np.linalg.norm(d, axis=-1)
    c = np.ones(pos.shape[-2]) if joint_weights is None else np.asarray(joint_weights, dtype=np.float64)
    val = float(np.sum(n * c))
    unit = np.divide(d, n[..., None], out=np.zeros_like(d), where=n[..., None] > 0) * c[:, None]
    g = np.zeros_like(pos)
    g[..., 1:, :, :] += unit
    g[..., :-1, :, :] -= unit
    return val, g


def energy_temporal(positions, joint_weights=None):
    return energy_temporal_grad(positions, joint_weights)[0]


def fusion_temporal_factors(model):
    return 1.0 - np.asarray(model.weights.weights, dtype=np.float64)


def energy_fusion_grad(model, positions):
    em, gm = energy_motion_grad(model, positions)
    et, gt = energy_temporal_grad(positions, fusion_temporal_factors(model))
    return em + et, gm + gt


def energy_fusion(model, positions):
    return energy_motion(model, positions) + energy_temporal(positions, fusion_temporal_factors(model))


def energy_observation_grad(positions, obs):
    pos = _positions(positions)
    if obs.targets.shape != pos.shape:
        raise ValidationError(f"observation shape {obs.targets.shape} != sequence shape {pos.shape}")
    r = np.where(obs.mask[..., None], 0.0, pos - obs.targets)
    return float(np.sum(r * r)), 2.0 * r


def energy_observation(positions, obs):
    return energy_observation_grad(positions, obs)[0]


def mean_displacement(positions):
    """Mean per-frame joint displacement ‖p_t − p_{t−1}‖ over frames and joints."""
    pos = _positions(positions)
    return float(np.mean(np.linalg.norm(pos[..., 1:, :, :] - pos[..., :-1, :, :], axis=-1)))
