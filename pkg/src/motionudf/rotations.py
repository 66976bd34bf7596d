"""Rotation parameterizations used by the kinematic chain.

Axis-angle vectors go through Rodrigues' formula; 6D vectors hold the first
two columns of a rotation matrix and are re-orthonormalized by Gram-Schmidt.
Every conversion that sits on an optimization path has a matching
vector-Jacobian product so gradients can flow back to the parameters.
"""
import numpy as np

from .errors import DegenerateRotationError

_SMALL_ANGLE = 1e-6
_GS_EPS = 1e-10


def skew(v):
    """Cross-product matrices, (..., 3) -> (..., 3, 3)."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _rodrigues_coeffs(angle):
    # a = sin(t)/t, b = (1-cos t)/t^2, c = (t - sin t)/t^3 with Taylor fallbacks
    small = angle < _SMALL_ANGLE
    t = np.where(small, 1.0, angle)
    t2 = t * t
    a = np.where(small, 1.0 - angle**2 / 6.0, np.sin(t) / t)
    b = np.where(small, 0.5 - angle**2 / 24.0, (1.0 - np.cos(t)) / t2)
    c = np.where(small, 1.0 / 6.0 - angle**2 / 120.0, (t - np.sin(t)) / (t2 * t))
    return a, b, c


def axis_angle_to_matrix(aa):
    aa = np.asarray(aa, dtype=np.float64)
    angle = np.linalg.norm(aa, axis=-1)
    a, b, _ = _rodrigues_coeffs(angle)
    K = skew(aa)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def left_jacobian(aa):
    """Left Jacobian of SO(3): dR/dθ_k · Rᵀ = skew(J_l e_k)."""
    aa = np.asarray(aa, dtype=np.float64)
    angle = np.linalg.norm(aa, axis=-1)
    _, b, c = _rodrigues_coeffs(angle)
    K = skew(aa)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + b[..., None, None] * K + c[..., None, None] * (K @ K)


def matrix_to_axis_angle(R):
    """Inverse of Rodrigues, robust near 0 and π (goes through quaternions)."""
    from scipy.spatial.transform import Rotation

    R = np.asarray(R, dtype=np.float64)
    flat = R.reshape(-1, 3, 3)
    if flat.shape[0] == 0:
        return np.zeros(R.shape[:-2] + (3,))
    rv = Rotation.from_matrix(np.array(flat)).as_rotvec()
    return rv.reshape(R.shape[:-2] + (3,))


def sixd_to_matrix(x, where=None):
    """Gram-Schmidt: the 6 numbers are the raw first and second columns.

    ``where`` is an optional callable turning the flat index of a degenerate
    entry into a human-readable location for the error message.
    """
    x = np.asarray(x, dtype=np.float64)
    a1, a2 = x[..., :3], x[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1)
    b1 = a1 / np.maximum(n1, _GS_EPS)[..., None]
    u = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    nu = np.linalg.norm(u, axis=-1)
    bad = (n1 < _GS_EPS) | (nu < _GS_EPS) | ~np.isfinite(n1) | ~np.isfinite(nu)
    if np.any(bad):
        idx = int(np.flatnonzero(bad.ravel())[0])
        loc = where(idx) if where is not None else f"entry {idx}"
        raise DegenerateRotationError(f"degenerate 6D rotation at {loc}")
    b2 = u / nu[..., None]
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def sixd_to_matrix_vjp(x, grad_R):
    """Pull a gradient w.r.t. the rotation matrix back to the 6D input."""
    x = np.asarray(x, dtype=np.float64)
    a1, a2 = x[..., :3], x[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    b1 = a1 / n1
    proj = np.sum(b1 * a2, axis=-1, keepdims=True)
    u = a2 - proj * b1
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    b2 = u / nu

    g1 = grad_R[..., :, 0].copy()
    g2 = grad_R[..., :, 1].copy()
    g3 = grad_R[..., :, 2]
    # b3 = b1 x b2
    g1 += np.cross(b2, g3)
    g2 += np.cross(g3, b1)
    # b2 = u / |u|
    gu = (g2 - b2 * np.sum(b2 * g2, axis=-1, keepdims=True)) / nu
    # u = a2 - (b1.a2) b1
    ga2 = gu - b1 * np.sum(b1 * gu, axis=-1, keepdims=True)
    g1 = g1 - (proj * gu + a2 * np.sum(b1 * gu, axis=-1, keepdims=True))
    # b1 = a1 / |a1|
    ga1 = (g1 - b1 * np.sum(b1 * g1, axis=-1, keepdims=True)) / n1
    return np.concatenate([ga1, ga2], axis=-1)


def matrix_to_sixd(R):
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def axis_angle_to_sixd(aa):
    return matrix_to_sixd(axis_angle_to_matrix(aa))


def sixd_to_axis_angle(x):
    return matrix_to_axis_angle(sixd_to_matrix(x))


def euler_to_matrix(angles_deg, order):
    """Intrinsic Euler angles in the listed channel order (BVH convention)."""
    from scipy.spatial.transform import Rotation

    angles_deg = np.asarray(angles_deg, dtype=np.float64)
    flat = angles_deg.reshape(-1, 3)
    R = Rotation.from_euler(order.upper(), flat, degrees=True).as_matrix()
    return R.reshape(angles_deg.shape[:-1] + (3, 3))
