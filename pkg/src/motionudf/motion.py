"""Motion sequences: the container type, native file format, resampling,
synthetic generation and corruption operators."""
import math
from dataclasses import dataclass, replace

import numpy as np

from . import container
from . import kinematics as kin
from .errors import FormatError, SegmentLengthError, ValidationError

NATIVE_MAGIC = b"MUDFMOT\x00"
NATIVE_VERSION = 1


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MotionSequence:
    """Per-frame joint positions (F, K, 3) in meters, optional local axis-angle
    rotations (F, K, 3), sampled at ``fps`` frames per second."""

    fps: int
    joints: tuple
    positions: np.ndarray
    rotations: np.ndarray = None
    root_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(str(j) for j in self.joints))
        pos = _frozen(self.positions)
        object.__setattr__(self, "positions", pos)
        if self.rotations is not None:
            object.__setattr__(self, "rotations", _frozen(self.rotations))
        self.validate()

    def validate(self):
        pos, K = self.positions, len(self.joints)
        if not (isinstance(self.fps, (int, np.integer)) and self.fps > 0):
            raise ValidationError(f"fps must be a positive integer, got {self.fps!r}")
        if pos.ndim != 3 or pos.shape[1:] != (K, 3):
            raise ValidationError(f"positions must be (F, {K}, 3), got {pos.shape}")
        if pos.shape[0] < 1 or K < 2:
            raise ValidationError("need at least one frame and two joints")
        if not np.all(np.isfinite(pos)):
            raise ValidationError("positions contain non-finite values")
        if self.rotations is not None:
            if self.rotations.shape != pos.shape:
                raise ValidationError("rotations must share the (F, K, 3) shape of positions")
            if not np.all(np.isfinite(self.rotations)):
                raise ValidationError("rotations contain non-finite values")
        if not 0 <= self.root_index < K:
            raise ValidationError("root_index out of range")

    @property
    def num_frames(self):
        return self.positions.shape[0]

    @property
    def num_joints(self):
        return self.positions.shape[1]

    def replace(self, **changes):
        return replace(self, **changes)

    def segment(self, start, length):
        if length < 5:
            raise SegmentLengthError("segments need at least 5 frames")
        if start < 0 or start + length > self.num_frames:
            raise SegmentLengthError(
                f"segment [{start}, {start + length}) exceeds {self.num_frames} frames")
        return MotionSegment(self.positions[start:start + length], source_offset=start)

    def __eq__(self, other):
        if not isinstance(other, MotionSequence):
            return NotImplemented
        if (self.rotations is None) != (other.rotations is None):
            return False
        return (self.fps == other.fps and self.joints == other.joints
                and self.root_index == other.root_index
                and np.array_equal(self.positions, other.positions)
                and (self.rotations is None or np.array_equal(self.rotations, other.rotations)))

    __hash__ = None


@dataclass(frozen=True)
class MotionSegment:
    positions: np.ndarray
    source_offset: int = 0

    def __post_init__(self):
        pos = _frozen(self.positions)
        if pos.ndim != 3 or pos.shape[2] != 3:
            raise ValidationError(f"segment positions must be (T, K, 3), got {pos.shape}")
        if pos.shape[0] < 5:
            raise SegmentLengthError(f"segments need at least 5 frames, got {pos.shape[0]}")
        object.__setattr__(self, "positions", pos)

    @property
    def length(self):
        return self.positions.shape[0]


def sequence_from_pose(skel, pose, fps, root_translation=None):
    pose = pose if isinstance(pose, kin.PoseParams) else kin.PoseParams(pose)
    aa = pose.to_kind("axis-angle").values
    pos = kin.forward_kinematics(skel, pose, root_translation)
    return MotionSequence(fps=int(fps), joints=skel.names, positions=pos, rotations=aa)


# --------------------------------------------------------------------------
# native container

def write_native(seq, path):
    """Write a sequence as magic + version + JSON header + little-endian arrays.

    Arrays are stored as 64-bit floats so the round trip is bit-exact.
    """
    seq.validate()
    arrays = [("positions", np.asarray(seq.positions, dtype="<f8"))]
    if seq.rotations is not None:
        arrays.append(("rotations", np.asarray(seq.rotations, dtype="<f8")))
    header = {"fps": int(seq.fps), "joints": list(seq.joints),
              "root_index": int(seq.root_index), "has_rotations": seq.rotations is not None}
    container.dump(path, NATIVE_MAGIC, NATIVE_VERSION, header, arrays)


def read_native(path):
    header, arrays = container.load(path, NATIVE_MAGIC, NATIVE_VERSION)
    if "positions" not in arrays:
        raise FormatError(f"{path}: no positions array")
    return MotionSequence(fps=int(header["fps"]), joints=tuple(header["joints"]),
                          positions=arrays["positions"].astype(np.float64),
                          rotations=(arrays["rotations"].astype(np.float64)
                                     if header.get("has_rotations") else None),
                          root_index=int(header["root_index"]))


# --------------------------------------------------------------------------
# resampling

def resample(seq, target_fps, interpolate=False):
    """Decimate to ``target_fps`` (kept frames are exact copies), or linearly
    interpolate when the rate ratio is not an integer and ``interpolate`` is set."""
    target_fps = int(target_fps)
    if target_fps <= 0 or target_fps > seq.fps:
        raise ValidationError(f"target fps must be in (0, {seq.fps}], got {target_fps}")
    if target_fps == seq.fps:
        return seq
    if seq.fps % target_fps == 0:
        step = seq.fps // target_fps
        rots = None if seq.rotations is None else seq.rotations[::step]
        return seq.replace(fps=target_fps, positions=seq.positions[::step], rotations=rots)
    if not interpolate:
        raise ValidationError(
            f"{seq.fps} Hz -> {target_fps} Hz is not an integer decimation; pass interpolate=True")
    from scipy.spatial.transform import Rotation, Slerp

    F = seq.num_frames
    n_out = (F - 1) * target_fps // seq.fps + 1
    t_src = np.arange(F) / seq.fps
    t_out = np.arange(n_out) / target_fps
    pos = np.empty((n_out,) + seq.positions.shape[1:])
    for j in range(seq.num_joints):
        for c in range(3):
            pos[:, j, c] = np.interp(t_out, t_src, seq.positions[:, j, c])
    rots = None
    if seq.rotations is not None:
        rots = np.empty((n_out, seq.num_joints, 3))
        for j in range(seq.num_joints):
            if F == 1:
                rots[:, j] = seq.rotations[0, j]
                continue
            slerp = Slerp(t_src, Rotation.from_rotvec(np.array(seq.rotations[:, j])))
            rots[:, j] = slerp(np.clip(t_out, t_src[0], t_src[-1])).as_rotvec()
    return seq.replace(fps=target_fps, positions=pos, rotations=rots)


# --------------------------------------------------------------------------
# synthetic motion

MOTION_KINDS = ("walk-cycle", "arm-swing", "squat", "random-spline")

# joint indices of the default skeleton
_L_HIP, _R_HIP, _SPINE1, _L_KNEE, _R_KNEE, _SPINE2 = 1, 2, 3, 4, 5, 6
_L_ANKLE, _R_ANKLE, _SPINE3, _NECK = 7, 8, 9, 12
_L_COLLAR, _R_COLLAR, _HEAD = 13, 14, 15
_L_SHOULDER, _R_SHOULDER, _L_ELBOW, _R_ELBOW, _L_WRIST, _R_WRIST = 16, 17, 18, 19, 20, 21


def _walk(t, rng, fps):
    F = len(t)
    aa = np.zeros((F, 24, 3))
    period = fps * rng.uniform(0.9, 1.3)
    w = 2 * np.pi / period
    ph = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(0.75, 1.2)
    s = np.sin(w * t + ph)
    c = np.cos(w * t + ph)
    aa[:, _L_HIP, 0] = -0.45 * amp * s
    aa[:, _R_HIP, 0] = 0.45 * amp * s
    aa[:, _L_KNEE, 0] = 0.55 * amp * (1 + np.sin(w * t + ph + 1.2)) / 2
    aa[:, _R_KNEE, 0] = 0.55 * amp * (1 - np.sin(w * t + ph + 1.2)) / 2
    aa[:, _L_ANKLE, 0] = -0.15 * amp * c
    aa[:, _R_ANKLE, 0] = 0.15 * amp * c
    aa[:, _SPINE2, 1] = 0.08 * amp * s
    aa[:, _SPINE3, 1] = 0.05 * amp * s
    aa[:, _L_SHOULDER, 2] = -1.2
    aa[:, _R_SHOULDER, 2] = 1.2
    aa[:, _L_SHOULDER, 1] = -0.4 * amp * s
    aa[:, _R_SHOULDER, 1] = -0.4 * amp * s
    aa[:, _L_ELBOW, 1] = -0.3 - 0.15 * amp * (1 + s)
    aa[:, _R_ELBOW, 1] = 0.3 + 0.15 * amp * (1 - s)
    aa[:, 0, 1] = rng.uniform(-np.pi, np.pi) + 0.05 * np.sin(w * t / 2)
    return aa


def _arm_swing(t, rng, fps):
    F = len(t)
    aa = np.zeros((F, 24, 3))
    w1 = 2 * np.pi / (fps * rng.uniform(0.8, 1.6))
    w2 = w1 * rng.uniform(0.4, 0.9)
    p1, p2 = rng.uniform(0, 2 * np.pi, size=2)
    a1, a2 = rng.uniform(0.5, 1.0, size=2)
    aa[:, _L_SHOULDER, 2] = -0.7 - a1 * 0.5 * (1 + np.sin(w1 * t + p1))
    aa[:, _R_SHOULDER, 2] = 0.7 + a2 * 0.5 * (1 + np.sin(w1 * t + p1 + rng.uniform(0, np.pi)))
    aa[:, _L_SHOULDER, 1] = -0.5 * a2 * np.sin(w2 * t + p2)
    aa[:, _R_SHOULDER, 1] = 0.5 * a1 * np.sin(w2 * t + p2)
    aa[:, _L_ELBOW, 1] = -0.6 * (1 + np.sin(w2 * t + p1)) / 2
    aa[:, _R_ELBOW, 1] = 0.6 * (1 + np.cos(w2 * t + p2)) / 2
    aa[:, _L_WRIST, 2] = 0.2 * np.sin(w1 * t)
    aa[:, _R_WRIST, 2] = -0.2 * np.sin(w1 * t)
    aa[:, _NECK, 1] = 0.1 * np.sin(w2 * t)
    aa[:, 0, 1] = rng.uniform(-np.pi, np.pi)
    return aa


def _squat(t, rng, fps):
    F = len(t)
    aa = np.zeros((F, 24, 3))
    w = 2 * np.pi / (fps * rng.uniform(1.6, 2.6))
    ph = rng.uniform(0, 2 * np.pi)
    depth = rng.uniform(0.6, 1.0)
    d = depth * (1 - np.cos(w * t + ph)) / 2
    aa[:, _L_HIP, 0] = -1.2 * d
    aa[:, _R_HIP, 0] = -1.2 * d
    aa[:, _L_KNEE, 0] = 1.9 * d
    aa[:, _R_KNEE, 0] = 1.9 * d
    aa[:, _L_ANKLE, 0] = -0.6 * d
    aa[:, _R_ANKLE, 0] = -0.6 * d
    aa[:, _SPINE1, 0] = 0.3 * d
    aa[:, _L_SHOULDER, 1] = -1.2 * d
    aa[:, _R_SHOULDER, 1] = 1.2 * d
    aa[:, _L_SHOULDER, 2] = -1.2 * (1 - d)
    aa[:, _R_SHOULDER, 2] = 1.2 * (1 - d)
    aa[:, 0, 1] = rng.uniform(-np.pi, np.pi)
    return aa


def _spline_angles(F, K, rng, knot_every=8):
    from scipy.interpolate import BSpline

    n_ctrl = max(4, F // knot_every + 4)
    k = 3
    knots = np.concatenate([np.zeros(k), np.linspace(0, F - 1, n_ctrl - k + 1), np.full(k, F - 1)])
    ctrl = rng.uniform(-1.0, 1.0, size=(n_ctrl, K, 3))
    return BSpline(knots, ctrl, k)(np.arange(F, dtype=np.float64))


def max_joint_acceleration(positions):
    """Largest second-difference magnitude over frames and joints (m/frame²)."""
    if positions.shape[0] < 3:
        return 0.0
    a = positions[2:] - 2 * positions[1:-1] + positions[:-2]
    return float(np.max(np.linalg.norm(a, axis=-1)))


def synthesize_motion(kind, frames, fps=30, seed=0, skeleton=None, accel_bound=0.02,
                      spline_amplitude=0.6):
    """Smooth joint-angle trajectories on the default skeleton, deterministic per seed.

    ``accel_bound`` only applies to ``random-spline``: the spline amplitude is
    shrunk until no joint's acceleration exceeds it.
    """
    if kind not in MOTION_KINDS:
        raise ValidationError(f"unknown motion kind {kind!r}; choose from {MOTION_KINDS}")
    if frames < 5:
        raise ValidationError("need at least 5 frames")
    skel = skeleton or kin.default_skeleton()
    if skel.num_joints != 24:
        raise ValidationError("synthetic motions are defined for the 24-joint skeleton")
    rng = np.random.default_rng(seed)
    t = np.arange(frames, dtype=np.float64)
    if kind == "walk-cycle":
        aa = _walk(t, rng, fps)
    elif kind == "arm-swing":
        aa = _arm_swing(t, rng, fps)
    elif kind == "squat":
        aa = _squat(t, rng, fps)
    else:
        base = _spline_angles(frames, skel.num_joints, rng)
        base[:, 0] *= 0.5
        scale = spline_amplitude
        for _ in range(60):
            aa = scale * base
            pos = kin.forward_kinematics(skel, aa)
            peak = max_joint_acceleration(pos)
            if peak <= accel_bound:
                break
            scale *= 0.95 * accel_bound / peak
        else:
            raise ValidationError("could not satisfy the acceleration bound")
        return MotionSequence(fps=int(fps), joints=skel.names, positions=pos, rotations=aa)
    return sequence_from_pose(skel, aa, fps)


def synthetic_suite(n, frames, fps=30, seed=0, kinds=MOTION_KINDS):
    """A reproducible mix of synthetic clips cycling through ``kinds``."""
    seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, size=n)
    return [synthesize_motion(kinds[i % len(kinds)], frames, fps, int(s)) for i, s in enumerate(seeds)]


# --------------------------------------------------------------------------
# corruption

CORRUPTION_KINDS = ("gaussian-positions", "uniform-rotations", "occlusion")
DEFAULT_UNIFORM_ROTATION_NOISE = 0.35


@dataclass(frozen=True)
class CorruptionSpec:
    """How to damage a sequence.

    ``magnitude`` is the mean joint displacement in meters (Gaussian), the
    half-width of the uniform rotation noise in radians, or the occlusion
    strength (1 zeroes the occluded rotations).  ``joints`` restricts the
    affected joints; by default every joint except the root is affected.
    """

    kind: str
    magnitude: float
    frame_fraction: float = 1.0
    seed: int = 0
    joints: tuple = None

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ValidationError(f"unknown corruption {self.kind!r}")
        if not self.magnitude >= 0:
            raise ValidationError("magnitude must be >= 0")
        if not 0.0 <= self.frame_fraction <= 1.0:
            raise ValidationError("frame_fraction must lie in [0, 1]")
        if self.joints is not None:
            object.__setattr__(self, "joints", tuple(int(j) for j in self.joints))


def gaussian_sigma(mean_displacement):
    """Per-axis σ whose 3D isotropic Gaussian has E‖x‖ = mean_displacement."""
    return mean_displacement * math.sqrt(math.pi / 8.0)


def _pick_frames(rng, F, fraction):
    n = int(round(fraction * F))
    return np.sort(rng.choice(F, size=n, replace=False))


def _fill_missing(pos, mask):
    out = pos.copy()
    t = np.arange(pos.shape[0])
    for j in range(pos.shape[1]):
        miss = mask[:, j]
        if not miss.any():
            continue
        keep = ~miss
        if not keep.any():
            out[:, j] = 0.0
            continue
        for c in range(3):
            out[miss, j, c] = np.interp(t[miss], t[keep], pos[keep, j, c])
    return out


def corrupt(seq, spec, skeleton=None):
    """Apply ``spec`` to ``seq``; returns the damaged sequence and an (F, K)
    occlusion mask (True = observation missing).

    Gaussian position noise leaves no consistent joint rotations, so the
    returned sequence carries positions only.  Rotation-space corruptions
    recompute positions through forward kinematics on ``skeleton`` (default
    skeleton when omitted).
    """
    F, K = seq.num_frames, seq.num_joints
    mask = np.zeros((F, K), dtype=bool)
    if spec.magnitude == 0:
        return seq, mask
    rng = np.random.default_rng(spec.seed)
    joints = np.array(spec.joints if spec.joints is not None
                      else [j for j in range(K) if j != seq.root_index], dtype=int)
    frames = _pick_frames(rng, F, spec.frame_fraction)

    if spec.kind == "gaussian-positions":
        pos = seq.positions.copy()
        noise = rng.normal(0.0, gaussian_sigma(spec.magnitude), size=(len(frames), len(joints), 3))
        pos[np.ix_(frames, joints)] += noise
        return seq.replace(positions=pos, rotations=None), mask

    skel = skeleton or kin.default_skeleton()
    if spec.kind == "uniform-rotations":
        if seq.rotations is None:
            raise ValidationError("uniform-rotations corruption needs joint rotations")
        rots = seq.rotations.copy()
        rots[np.ix_(frames, joints)] += rng.uniform(-spec.magnitude, spec.magnitude,
                                                    size=(len(frames), len(joints), 3))
        return _refk(seq, skel, rots), mask

    # occlusion
    if seq.rotations is None:
        mask[np.ix_(frames, joints)] = True
        return seq.replace(positions=_fill_missing(seq.positions, mask)), mask
    hidden = set(joints.tolist())
    for j in joints:
        hidden.update(skel.descendants(int(j)))
    hidden = np.array(sorted(hidden), dtype=int)
    rots = seq.rotations.copy()
    rots[np.ix_(frames, joints)] *= 1.0 - min(spec.magnitude, 1.0)
    mask[np.ix_(frames, hidden)] = True
    return _refk(seq, skel, rots), mask


def _refk(seq, skel, rots):
    if skel.num_joints != seq.num_joints:
        raise ValidationError("skeleton does not match the sequence's joint count")
    root = seq.positions[:, seq.root_index]
    pos = kin.forward_kinematics(skel, rots, root_translation=root)
    return seq.replace(positions=pos, rotations=rots)
