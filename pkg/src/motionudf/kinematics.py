"""Skeleton model, forward kinematics and skeleton-derived joint weights."""
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import rotations as rot
from .errors import FormatError, ValidationError

EXCLUDED_JOINTS = (0, 1, 2, 3)
ROTATION_SIZES = {"axis-angle": 3, "6d": 6}

# joint groups used by the occlusion protocol (default skeleton indices)
OCCLUSION_GROUPS = {
    "leg": (4, 5, 7, 8, 10, 11),
    "arm": (18, 19, 20, 21, 22, 23),
    "shoulder": (13, 14, 16, 17),
}


@dataclass(frozen=True)
class Skeleton:
    parents: tuple
    offsets: np.ndarray
    names: tuple

    def __post_init__(self):
        parents = tuple(int(p) for p in self.parents)
        offsets = np.array(self.offsets, dtype=np.float64)
        offsets.setflags(write=False)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "names", tuple(self.names))
        K = len(parents)
        if K < 2 or offsets.shape != (K, 3) or len(self.names) != K:
            raise ValidationError("skeleton needs >= 2 joints with matching names and (K, 3) offsets")
        if parents[0] != -1 or any(p == -1 for p in parents[1:]):
            raise ValidationError("joint 0 must be the single root")
        for i, p in enumerate(parents[1:], start=1):
            if not 0 <= p < i:
                raise ValidationError(f"joint {i} has parent {p}; parents must precede children")
        if not np.all(np.isfinite(offsets)):
            raise ValidationError("skeleton offsets must be finite")
        if np.any(np.linalg.norm(offsets[1:], axis=1) == 0):
            raise ValidationError("non-root joints need a nonzero offset")

    @property
    def num_joints(self):
        return len(self.parents)

    def children(self, joint):
        return [i for i, p in enumerate(self.parents) if p == joint]

    def descendants(self, joint):
        """All joints strictly below ``joint`` in the tree."""
        out = []
        below = {joint}
        for i in range(joint + 1, self.num_joints):
            if self.parents[i] in below:
                below.add(i)
                out.append(i)
        return out

    def to_json(self):
        return {"names": list(self.names), "parents": list(self.parents),
                "offsets": self.offsets.tolist()}


def skeleton_from_json(doc):
    try:
        return Skeleton(parents=doc["parents"], offsets=doc["offsets"], names=doc["names"])
    except KeyError as exc:
        raise FormatError(f"skeleton definition missing key {exc}") from None


def load_skeleton(path):
    with open(path) as fh:
        return skeleton_from_json(json.load(fh))


def default_skeleton():
    text = resources.files("motionudf").joinpath("data/smpl24_skeleton.json").read_text()
    return skeleton_from_json(json.loads(text))


def save_skeleton(skel, path):
    Path(path).write_text(json.dumps(skel.to_json(), indent=2))


@dataclass(frozen=True)
class PoseParams:
    """Per-frame local joint rotations, ``values`` shaped (F, K, 3) or (F, K, 6)."""

    values: np.ndarray
    kind: str = "axis-angle"

    def __post_init__(self):
        if self.kind not in ROTATION_SIZES:
            raise ValidationError(f"unknown rotation parameterization {self.kind!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != ROTATION_SIZES[self.kind] or v.shape[0] < 1:
            raise ValidationError(f"pose values must be (F, K, {ROTATION_SIZES[self.kind]}), got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def num_frames(self):
        return self.values.shape[0]

    def matrices(self):
        if self.kind == "axis-angle":
            return rot.axis_angle_to_matrix(self.values)
        K = self.values.shape[1]
        return rot.sixd_to_matrix(self.values,
                                  where=lambda i: f"frame {i // K}, joint {i % K}")

    def to_kind(self, kind):
        if kind == self.kind:
            return self
        if kind == "6d":
            return PoseParams(rot.axis_angle_to_sixd(self.values), "6d")
        return PoseParams(rot.matrix_to_axis_angle(self.matrices()), "axis-angle")


def _as_pose(pose):
    if isinstance(pose, PoseParams):
        return pose
    return PoseParams(np.asarray(pose, dtype=np.float64), "axis-angle")


def _fk_core(skel, local, root_translation=None):
    F = local.shape[0]
    K = skel.num_joints
    glob = np.empty((F, K, 3, 3))
    pos = np.empty((F, K, 3))
    glob[:, 0] = local[:, 0]
    pos[:, 0] = 0.0 if root_translation is None else root_translation
    for i in range(1, K):
        p = skel.parents[i]
        glob[:, i] = glob[:, p] @ local[:, i]
        pos[:, i] = pos[:, p] + glob[:, p] @ skel.offsets[i]
    return pos, glob


def forward_kinematics(skel, pose, root_translation=None):
    """Joint world positions (F, K, 3) with the root pinned at the origin.

    ``root_translation`` (F, 3) is only used for ingested mocap clips; the
    prior itself always works with a pinned root.
    """
    pose = _as_pose(pose)
    if pose.values.shape[1] != skel.num_joints:
        raise ValidationError(f"pose has {pose.values.shape[1]} joints, skeleton has {skel.num_joints}")
    pos, _ = _fk_core(skel, pose.matrices(), root_translation)
    return pos


def fk_vjp(skel, pose, grad_positions):
    """Gradient of a scalar w.r.t. pose values, given dE/dpositions (F, K, 3)."""
    pose = _as_pose(pose)
    local = pose.matrices()
    pos, glob = _fk_core(skel, local)
    G = np.asarray(grad_positions, dtype=np.float64)
    K = skel.num_joints

    # subtree accumulations, children first (parents precede children)
    sum_g = G.copy()
    if pose.kind == "axis-angle":
        sum_pxg = np.cross(pos, G)
        for i in range(K - 1, 0, -1):
            p = skel.parents[i]
            sum_g[:, p] += sum_g[:, i]
            sum_pxg[:, p] += sum_pxg[:, i]
        torque = sum_pxg - np.cross(pos, sum_g)
        par_rot = np.empty_like(glob)
        par_rot[:, 0] = np.eye(3)
        for i in range(1, K):
            par_rot[:, i] = glob[:, skel.parents[i]]
        w = np.einsum("fkji,fkj->fki", par_rot, torque)
        Jl = rot.left_jacobian(pose.values)
        return np.einsum("fkji,fkj->fki", Jl, w)

    sum_gp = G[..., :, None] * pos[..., None, :]
    for i in range(K - 1, 0, -1):
        p = skel.parents[i]
        sum_g[:, p] += sum_g[:, i]
        sum_gp[:, p] += sum_gp[:, i]
    M = sum_gp - sum_g[..., :, None] * pos[..., None, :]
    par_rot = np.empty_like(glob)
    par_rot[:, 0] = np.eye(3)
    for i in range(1, K):
        par_rot[:, i] = glob[:, skel.parents[i]]
    grad_local = np.swapaxes(par_rot, -1, -2) @ M @ glob
    return rot.sixd_to_matrix_vjp(pose.values, grad_local)


def fk_jacobian(skel, pose):
    """Dense Jacobian d positions / d pose, shape (F, K*3, K*P)."""
    pose = _as_pose(pose)
    F, K, P = pose.values.shape
    jac = np.empty((F, K * 3, K * P))
    for j in range(K):
        for c in range(3):
            G = np.zeros((F, K, 3))
            G[:, j, c] = 1.0
            jac[:, j * 3 + c] = fk_vjp(skel, pose, G).reshape(F, K * P)
    return jac


def bone_path_sums(skel):
    """Summed bone lengths from each joint up to the root (root -> 0)."""
    lengths = np.linalg.norm(skel.offsets, axis=1)
    out = np.zeros(skel.num_joints)
    for i in range(1, skel.num_joints):
        out[i] = out[skel.parents[i]] + lengths[i]
    return out


@dataclass(frozen=True)
class JointWeights:
    path_sums: np.ndarray
    weights: np.ndarray
    excluded: frozenset = field(default_factory=lambda: frozenset(EXCLUDED_JOINTS))

    @property
    def included(self):
        return [i for i in range(len(self.weights)) if i not in self.excluded]


def weight_from_path_sum(l):
    l2 = 4.0 * np.square(np.asarray(l, dtype=np.float64))
    return l2 / (l2 + 1.0)


def joint_weights(path_sums, excluded=EXCLUDED_JOINTS):
    l = np.asarray(path_sums, dtype=np.float64)
    if np.any(l < 0):
        raise ValidationError("bone path sums must be non-negative")
    w = weight_from_path_sum(l)
    excluded = frozenset(int(i) for i in excluded)
    for i in excluded:
        if i < len(w):
            w[i] = 0.0
    return JointWeights(path_sums=l, weights=w, excluded=excluded)
