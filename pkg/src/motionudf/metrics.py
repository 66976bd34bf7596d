"""Pose-sequence error metrics and correlation helpers.

Position metrics are reported in millimetres; inputs are in metres.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .motion import MotionSegment, MotionSequence


def _pos(x):
    if isinstance(x, (MotionSequence, MotionSegment)):
        return x.positions
    return np.asarray(x, dtype=np.float64)


def _pair(pred, gt):
    p, g = _pos(pred), _pos(gt)
    if p.shape != g.shape or p.ndim != 3 or p.shape[-1] != 3:
        raise ValidationError(f"pred {p.shape} and gt {g.shape} must both be (F, K, 3)")
    return p, g


def per_joint_position_error(pred, gt, root=0):
    """Root-aligned Euclidean error (F, K) in metres."""
    p, g = _pair(pred, gt)
    return np.linalg.norm((p - p[:, root:root + 1]) - (g - g[:, root:root + 1]), axis=-1)


def mpjpe(pred, gt, root=0):
    return 1000.0 * float(np.mean(per_joint_position_error(pred, gt, root)))


def similarity_align(src, dst):
    """Per-frame least-squares similarity transform of ``src`` onto ``dst``
    (both (F, K, 3)); returns the aligned copy of ``src``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s = src.mean(axis=1, keepdims=True)
    mu_d = dst.mean(axis=1, keepdims=True)
    xs, xd = src - mu_s, dst - mu_d
    H = np.einsum("fki,fkj->fij", xs, xd)  # cross-covariance, src^T dst
    U, S, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(np.swapaxes(Vt, 1, 2) @ np.swapaxes(U, 1, 2)))
    D = np.ones_like(S)
    D[:, -1] = np.where(d < 0, -1.0, 1.0)
    R = np.swapaxes(Vt, 1, 2) @ (D[:, :, None] * np.swapaxes(U, 1, 2))
    var_s = np.sum(xs * xs, axis=(1, 2))
    scale = np.divide(np.sum(S * D, axis=1), var_s, out=np.zeros_like(var_s), where=var_s > 0)
    return scale[:, None, None] * np.einsum("fij,fkj->fki", R, xs) + mu_d


def pa_mpjpe(pred, gt):
    p, g = _pair(pred, gt)
    return 1000.0 * float(np.mean(np.linalg.norm(similarity_align(p, g) - g, axis=-1)))


def _accel(p):
    return p[2:] - 2.0 * p[1:-1] + p[:-2]


def per_joint_accel_error(pred, gt):
    """‖a_pred − a_gt‖ per frame and joint, (F-2, K), in metres/frame²."""
    p, g = _pair(pred, gt)
    if p.shape[0] < 3:
        raise ValidationError("acceleration error needs at least 3 frames")
    return np.linalg.norm(_accel(p) - _accel(g), axis=-1)


def accel_error(pred, gt):
    return 1000.0 * float(np.mean(per_joint_accel_error(pred, gt)))


def _features(rot):
    r = np.asarray(rot.rotations if isinstance(rot, MotionSequence) else rot, dtype=np.float64)
    if r is None or r.ndim < 2:
        raise ValidationError("NPSS needs per-frame rotation features")
    return r.reshape(r.shape[0], -1)


def power_spectrum(x):
    """|DFT|² along the time axis of an (F, D) array."""
    return np.abs(np.fft.fft(x, axis=0)) ** 2


def npss(pred_rotations, gt_rotations, spectrum=power_spectrum):
    """Normalized power spectrum similarity over per-axis rotation features.

    Each feature's power spectrum is normalized to unit mass; the distance
    between the cumulative spectra (L1 earth mover's distance) is averaged
    over features, weighted by the ground-truth feature power."""
    if pred_rotations is None or gt_rotations is None:
        raise ValidationError("NPSS needs rotations for both sequences")
    p, g = _features(pred_rotations), _features(gt_rotations)
    if p.shape != g.shape:
        raise ValidationError(f"rotation shapes differ: {p.shape} vs {g.shape}")
    pp, gp = spectrum(p), spectrum(g)
    p_tot, g_tot = pp.sum(axis=0), gp.sum(axis=0)
    if not np.any(g_tot > 0):
        raise ValidationError("ground-truth rotations carry no spectral power")
    pn = np.divide(pp, p_tot, out=np.zeros_like(pp), where=p_tot > 0)
    gn = np.divide(gp, g_tot, out=np.zeros_like(gp), where=g_tot > 0)
    emd = np.sum(np.abs(np.cumsum(pn, axis=0) - np.cumsum(gn, axis=0)), axis=0)
    return float(np.sum(emd * g_tot) / np.sum(g_tot))


# --------------------------------------------------------------------------
# correlation

@dataclass(frozen=True)
class Correlation:
    """Pearson coefficient; ``r`` is None and ``defined`` False when either
    variable has zero variance."""

    r: float = None
    defined: bool = True
    n: int = 0

    def to_dict(self):
        return {"r": self.r, "defined": self.defined, "n": self.n}


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 2:
        raise ValidationError("pearson needs two equal-length samples of size >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return Correlation(None, False, x.size)
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return Correlation(float(np.clip(r, -1.0, 1.0)), True, x.size)


# --------------------------------------------------------------------------
# report

@dataclass
class MetricReport:
    mpjpe: float
    pa_mpjpe: float
    accel_err: float
    npss: float = None
    per_joint: dict = field(default_factory=dict)
    # vertex error needs a body mesh, which this package does not model
    omitted: tuple = ("pve",)

    def to_dict(self):
        return {"mpjpe_mm": self.mpjpe, "pa_mpjpe_mm": self.pa_mpjpe,
                "accel_err_mm_per_frame2": self.accel_err, "npss": self.npss,
                "per_joint": self.per_joint, "omitted": list(self.omitted)}


def evaluate(pred, gt, root=0):
    p, g = _pair(pred, gt)
    npss_val = None
    if isinstance(pred, MotionSequence) and isinstance(gt, MotionSequence) \
            and pred.rotations is not None and gt.rotations is not None:
        npss_val = npss(pred.rotations, gt.rotations)
    pj = {
        "mpjpe_mm": (1000.0 * per_joint_position_error(p, g, root).mean(axis=0)).tolist(),
        "accel_err_mm_per_frame2": (1000.0 * per_joint_accel_error(p, g).mean(axis=0)).tolist(),
    }
    return MetricReport(mpjpe(p, g, root), pa_mpjpe(p, g), accel_error(p, g), npss_val, pj)
