"""Read-only BVH ingestion.

Only ZXY and ZYX rotation channel orders are accepted. End Sites become
joints of their own (named ``<parent>_end``) so that leaf bones keep their
end-effector position.
"""
import numpy as np

from . import rotations as rot
from .errors import FormatError
from .motion import MotionSequence

SUPPORTED_ORDERS = ("ZXY", "ZYX")
_POS = {"Xposition": 0, "Yposition": 1, "Zposition": 2}
_ROT = {"Xrotation": "X", "Yrotation": "Y", "Zrotation": "Z"}


class _Joint:
    def __init__(self, name, parent, line):
        self.name = name
        self.parent = parent
        self.line = line
        self.offset = None
        self.channels = []


def _tokens(text):
    for lineno, line in enumerate(text.splitlines(), start=1):
        for tok in line.split():
            yield lineno, tok


class _Stream:
    def __init__(self, text):
        self._it = _tokens(text)
        self._peek = None
        self.line = 0

    def next(self, what="token"):
        if self._peek is not None:
            tok, self._peek = self._peek, None
        else:
            tok = next(self._it, None)
        if tok is None:
            raise FormatError(f"unexpected end of file, expected {what}", line=self.line)
        self.line = tok[0]
        return tok[1]

    def peek(self):
        if self._peek is None:
            self._peek = next(self._it, None)
        return None if self._peek is None else self._peek[1]

    def expect(self, word):
        tok = self.next(repr(word))
        if tok != word:
            raise FormatError(f"expected {word!r}, found {tok!r}", line=self.line)

    def number(self, what="number"):
        tok = self.next(what)
        try:
            return float(tok)
        except ValueError:
            raise FormatError(f"expected {what}, found {tok!r}", line=self.line) from None


def _parse_joint(st, joints, name, parent, include_end_sites):
    j = _Joint(name, parent, st.line)
    idx = len(joints)
    joints.append(j)
    st.expect("{")
    while True:
        tok = st.next("joint body")
        if tok == "OFFSET":
            j.offset = np.array([st.number("offset") for _ in range(3)])
        elif tok == "CHANNELS":
            n = st.number("channel count")
            if n != int(n) or n < 0:
                raise FormatError("bad channel count", line=st.line)
            j.channels = [st.next("channel name") for _ in range(int(n))]
            for ch in j.channels:
                if ch not in _POS and ch not in _ROT:
                    raise FormatError(f"unknown channel {ch!r}", line=st.line)
        elif tok == "JOINT":
            _parse_joint(st, joints, st.next("joint name"), idx, include_end_sites)
        elif tok == "End":
            st.expect("Site")
            line = st.line
            st.expect("{")
            st.expect("OFFSET")
            off = np.array([st.number("offset") for _ in range(3)])
            st.expect("}")
            if include_end_sites:
                e = _Joint(f"{name}_end", idx, line)
                e.offset = off
                joints.append(e)
        elif tok == "}":
            break
        else:
            raise FormatError(f"unexpected token {tok!r} in joint {name!r}", line=st.line)
    if j.offset is None:
        raise FormatError(f"joint {name!r} has no OFFSET", line=j.line)


def _channel_layout(j):
    rots = [ch for ch in j.channels if ch in _ROT]
    if rots:
        order = "".join(_ROT[ch] for ch in rots)
        if len(rots) != 3 or order not in SUPPORTED_ORDERS:
            raise FormatError(f"joint {j.name!r}: unsupported rotation order {order!r} "
                              f"(supported: {', '.join(SUPPORTED_ORDERS)})", line=j.line)
    else:
        order = None
    pos = [ch for ch in j.channels if ch in _POS]
    if pos and sorted(_POS[c] for c in pos) != [0, 1, 2]:
        raise FormatError(f"joint {j.name!r}: position channels must cover X, Y and Z", line=j.line)
    return order


def parse_bvh(text, scale=1.0, include_end_sites=True):
    st = _Stream(text)
    st.expect("HIERARCHY")
    st.expect("ROOT")
    joints = []
    _parse_joint(st, joints, st.next("root name"), -1, include_end_sites)
    if st.peek() == "ROOT":
        raise FormatError("multiple ROOT hierarchies are not supported", line=st.line)
    st.expect("MOTION")
    st.expect("Frames:")
    n_frames = st.number("frame count")
    if n_frames != int(n_frames) or n_frames < 1:
        raise FormatError("frame count must be a positive integer", line=st.line)
    n_frames = int(n_frames)
    st.expect("Frame")
    st.expect("Time:")
    frame_time = st.number("frame time")
    if frame_time <= 0:
        raise FormatError("frame time must be positive", line=st.line)

    orders = [_channel_layout(j) for j in joints]
    n_channels = sum(len(j.channels) for j in joints)
    values = np.empty((n_frames, n_channels))
    for f in range(n_frames):
        for c in range(n_channels):
            values[f, c] = st.number(f"channel value (frame {f})")
    if st.peek() is not None:
        raise FormatError(f"trailing data after {n_frames} frames", line=st.line + 1)

    K = len(joints)
    local_rot = np.broadcast_to(np.eye(3), (n_frames, K, 3, 3)).copy()
    local_trans = np.empty((n_frames, K, 3))
    col = 0
    for k, j in enumerate(joints):
        local_trans[:, k] = j.offset * scale
        if not j.channels:
            continue
        block = values[:, col:col + len(j.channels)]
        col += len(j.channels)
        pcols = [i for i, ch in enumerate(j.channels) if ch in _POS]
        if pcols:
            for i in pcols:
                local_trans[:, k, _POS[j.channels[i]]] = block[:, i] * scale
        if orders[k] is not None:
            rcols = [i for i, ch in enumerate(j.channels) if ch in _ROT]
            local_rot[:, k] = rot.euler_to_matrix(block[:, rcols], orders[k])

    pos = np.empty((n_frames, K, 3))
    glob = np.empty((n_frames, K, 3, 3))
    for k, j in enumerate(joints):
        if j.parent < 0:
            glob[:, k] = local_rot[:, k]
            pos[:, k] = local_trans[:, k]
        else:
            glob[:, k] = glob[:, j.parent] @ local_rot[:, k]
            pos[:, k] = pos[:, j.parent] + np.einsum("fij,fj->fi", glob[:, j.parent], local_trans[:, k])

    meta = {
        "parents": [j.parent for j in joints],
        "offsets": np.array([j.offset * scale for j in joints]),
        "frame_time": frame_time,
    }
    seq = MotionSequence(fps=int(round(1.0 / frame_time)), joints=tuple(j.name for j in joints),
                         positions=pos, rotations=rot.matrix_to_axis_angle(local_rot), root_index=0)
    return seq, meta


def read_bvh(path, scale=1.0, include_end_sites=True):
    """Parse a BVH file into a MotionSequence (positions by forward kinematics)."""
    with open(path) as fh:
        text = fh.read()
    seq, _ = parse_bvh(text, scale=scale, include_end_sites=include_end_sites)
    return seq


def read_bvh_skeleton(path, scale=1.0, include_end_sites=True):
    """Rest offsets and parents of a BVH hierarchy as a :class:`Skeleton`."""
    from .kinematics import Skeleton

    with open(path) as fh:
        seq, meta = parse_bvh(fh.read(), scale=scale, include_end_sites=include_end_sites)
    offsets = meta["offsets"].copy()
    offsets[0] = 0.0
    return Skeleton(parents=meta["parents"], offsets=offsets, names=seq.joints)
