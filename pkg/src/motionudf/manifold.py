"""Acceleration vectors, the L1 distance between them, zero-level sets of
clean motion and nearest-neighbour distance labels."""
import csv
import heapq
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import container
from .errors import DimensionError, NotEnoughPointsError, SegmentLengthError, ValidationError
from .motion import MotionSegment

DEFAULT_K = 5
DEFAULT_CAP = 50_000
ZLS_MAGIC = b"MUDFZLS\x00"
ZLS_VERSION = 1
METRICS = ("l1", "l2")


def accel_dim(T):
    return (T - 2) * 3


def acceleration(segment, joint):
    """Second central difference of one joint over a segment, flattened
    time-major to a ((T-2)*3,) vector."""
    pos = segment.positions if isinstance(segment, MotionSegment) else np.asarray(segment)
    if pos.shape[0] < 3:
        raise SegmentLengthError("acceleration needs at least 3 frames")
    p = pos[:, joint]
    return (p[2:] - 2.0 * p[1:-1] + p[:-2]).reshape(-1)


def all_accelerations(positions):
    """Per-joint acceleration vectors for a (..., T, K, 3) stack -> (..., K, (T-2)*3)."""
    p = np.asarray(positions, dtype=np.float64)
    a = p[..., 2:, :, :] - 2.0 * p[..., 1:-1, :, :] + p[..., :-2, :, :]
    a = np.moveaxis(a, -2, -3)  # (..., K, T-2, 3)
    return a.reshape(a.shape[:-2] + (-1,))


def acceleration_vjp(grad_accel, T):
    """Adjoint of :func:`all_accelerations`: (..., K, (T-2)*3) -> (..., T, K, 3)."""
    g = np.asarray(grad_accel)
    K = g.shape[-2]
    g = np.moveaxis(g.reshape(g.shape[:-1] + (T - 2, 3)), -3, -2)  # (..., T-2, K, 3)
    out = np.zeros(g.shape[:-3] + (T, K, 3))
    out[..., 2:, :, :] += g
    out[..., 1:-1, :, :] -= 2.0 * g
    out[..., :-2, :, :] += g
    return out


def sliding_windows(positions, T):
    """All stride-1 windows of a (F, K, 3) array -> (F-T+1, T, K, 3) view."""
    positions = np.asarray(positions)
    F = positions.shape[0]
    if F < T:
        raise SegmentLengthError(f"sequence has {F} frames, segment length is {T}")
    win = np.lib.stride_tricks.sliding_window_view(positions, T, axis=0)  # (W, K, 3, T)
    return np.moveaxis(win, -1, 1)


def _rows_distance(points, q, metric="l1"):
    diff = points - q
    if metric == "l1":
        return np.abs(diff).sum(axis=1)
    return np.sqrt(np.square(diff).sum(axis=1))


def accel_distance(a, b, metric="l1"):
    """Sum over timesteps of |dx|+|dy|+|dz| (or the Euclidean variant)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"acceleration vectors differ in size: {a.size} vs {b.size}")
    return float(_rows_distance(b[None, :], a, metric)[0])


@dataclass(frozen=True)
class ZeroLevelSet:
    """Acceleration vectors of clean motion for one joint (distance 0)."""

    joint_index: int
    points: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    T: int

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != accel_dim(self.T):
            raise DimensionError(f"points must be (N, {accel_dim(self.T)}), got {pts.shape}")
        for name, arr in (("points", pts), ("mean", self.mean), ("std", self.std)):
            a = np.array(arr, dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @cached_property
    def vptree(self):
        return VPTree(self.points)


def normalization_stats(points, floor=1e-8):
    mean = points.mean(axis=0)
    std = points.std(axis=0)
    std = np.where(std < floor, 1.0, std)
    return mean, std


def make_zero_level(points, joint, T, k=DEFAULT_K):
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < k:
        raise NotEnoughPointsError(f"zero-level set has {points.shape[0]} points, need >= {k}")
    mean, std = normalization_stats(points)
    return ZeroLevelSet(joint_index=int(joint), points=points, mean=mean, std=std, T=int(T))


def _unique_rows_first(points):
    """Indices of the first occurrence of each bitwise-distinct row, in order."""
    view = np.ascontiguousarray(points).view(np.dtype((np.void, points.dtype.itemsize * points.shape[1])))
    _, first = np.unique(view.ravel(), return_index=True)
    return np.sort(first)


def build_zero_level(sequences, T, joint, stride=1, cap=DEFAULT_CAP, seed=0, k=DEFAULT_K):
    """Sample acceleration vectors from random windows of clean sequences.

    Windows are enumerated at ``stride``, visited in a seeded random order and
    kept while bitwise-new, until ``cap`` points are collected.
    """
    if T < 5:
        raise ValidationError("segment length must be >= 5")
    vecs = []
    for seq in sequences:
        pos = seq.positions if hasattr(seq, "positions") else np.asarray(seq)
        if pos.shape[0] < T:
            raise SegmentLengthError(f"sequence with {pos.shape[0]} frames is shorter than T={T}")
        starts = np.arange(0, pos.shape[0] - T + 1, stride)
        win = sliding_windows(pos[:, joint:joint + 1], T)[starts]
        vecs.append(all_accelerations(win)[:, 0])
    if not vecs:
        raise NotEnoughPointsError("no sequences given")
    allv = np.concatenate(vecs)
    order = np.random.default_rng(seed).permutation(allv.shape[0])
    shuffled = allv[order]
    keep = _unique_rows_first(shuffled)[:cap]
    return make_zero_level(shuffled[keep], joint, T, k=k)


def save_zero_level(zl, path):
    header = {"joint_index": zl.joint_index, "T": zl.T}
    container.dump(path, ZLS_MAGIC, ZLS_VERSION, header,
                   [("points", zl.points), ("mean", zl.mean), ("std", zl.std)])


def load_zero_level(path):
    header, arrays = container.load(path, ZLS_MAGIC, ZLS_VERSION)
    return ZeroLevelSet(joint_index=header["joint_index"], points=arrays["points"],
                        mean=arrays["mean"], std=arrays["std"], T=header["T"])


# --------------------------------------------------------------------------
# nearest neighbours

def _check_k(zl, k):
    if k < 1 or k > zl.size:
        raise NotEnoughPointsError(f"k={k} but the zero-level set holds {zl.size} points")


def _top_k(dist, k):
    """Indices of the k smallest entries, ties broken by index."""
    if k < dist.size:
        kth = np.partition(dist, k - 1)[k - 1]
        cand = np.flatnonzero(dist <= kth)
    else:
        cand = np.arange(dist.size)
    order = np.lexsort((cand, dist[cand]))
    return cand[order[:k]]


def knn_scan(query, points, k, metric="l1"):
    """Exhaustive search; returns (indices, distances) sorted by (distance, index)."""
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    d = _rows_distance(points, q, metric)
    idx = _top_k(d, k)
    return idx, d[idx]


class VPTree:
    """Exact vantage-point tree over the rows of ``points``.

    Pruning keeps a small slack so floating-point rounding in the triangle
    inequality can never drop a true neighbour; results equal the scan.
    """

    def __init__(self, points, leaf_size=16, metric="l1", seed=0):
        self.points = np.asarray(points, dtype=np.float64)
        self.leaf_size = leaf_size
        self.metric = metric
        rng = np.random.default_rng(seed)
        self.root = self._build(np.arange(self.points.shape[0]), rng)

    def _build(self, idx, rng):
        if idx.size <= self.leaf_size:
            return ("leaf", idx)
        vp = idx[rng.integers(idx.size)]
        rest = idx[idx != vp]
        d = _rows_distance(self.points[rest], self.points[vp], self.metric)
        mu = float(np.median(d))
        inner = rest[d <= mu]
        outer = rest[d > mu]
        if inner.size == 0 or outer.size == 0:
            return ("leaf", idx)
        return ("node", vp, mu, self._build(inner, rng), self._build(outer, rng))

    def query(self, query, k):
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        best = []  # max-heap on (distance, index) via negation

        def tau():
            return np.inf if len(best) < k else -best[0][0]

        def offer(d, i):
            item = (-d, -i)
            if len(best) < k:
                heapq.heappush(best, item)
            elif (d, i) < (-best[0][0], -best[0][1]):
                heapq.heapreplace(best, item)

        stack = [self.root]
        while stack:
            node = stack.pop()
            if node[0] == "leaf":
                idx = node[1]
                d = _rows_distance(self.points[idx], q, self.metric)
                for di, ii in zip(d.tolist(), idx.tolist()):
                    offer(di, ii)
                continue
            _, vp, mu, inner, outer = node
            dvp = float(_rows_distance(self.points[vp:vp + 1], q, self.metric)[0])
            offer(dvp, int(vp))
            first, second = (inner, outer) if dvp <= mu else (outer, inner)
            for child in (second, first):  # `first` is popped next
                t = tau()
                slack = 1e-9 * (1.0 + abs(dvp) + abs(mu) + (0.0 if np.isinf(t) else t))
                if child is inner and dvp - mu > t + slack:
                    continue
                if child is outer and mu - dvp > t + slack:
                    continue
                stack.append(child)
        out = sorted((-nd, -ni) for nd, ni in best)
        return np.array([i for _, i in out], dtype=np.intp), np.array([d for d, _ in out])


def knn_label(query, zl, k=DEFAULT_K, method="scan", metric="l1"):
    """Mean of the k smallest distances from ``query`` to the zero-level set."""
    _check_k(zl, k)
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.size != zl.dim:
        raise DimensionError(f"query has {q.size} components, zero level has {zl.dim}")
    if method == "scan":
        _, d = knn_scan(q, zl.points, k, metric)
    elif method == "vptree":
        if metric != "l1":
            tree = VPTree(zl.points, metric=metric)
        else:
            tree = zl.vptree
        _, d = tree.query(q, k)
    else:
        raise ValidationError(f"unknown search method {method!r}")
    return float(np.mean(d))


@dataclass(frozen=True)
class LabeledSample:
    accel: np.ndarray
    d: float

    def __post_init__(self):
        if not self.d >= 0:
            raise ValidationError("distance labels must be non-negative")

    @property
    def target(self):
        return float(np.log1p(self.d))


def label_distances(queries, zl, k=DEFAULT_K, method="scan", metric="l1"):
    """Raw KNN distances for a (Q, D) batch, in query order."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    return np.array([knn_label(q, zl, k, method, metric) for q in queries])


def label_dataset(queries, zl, k=DEFAULT_K, method="scan", metric="l1"):
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    d = label_distances(queries, zl, k, method, metric)
    return [LabeledSample(accel=q.copy(), d=float(di)) for q, di in zip(queries, d)]


def write_labels_csv(path, samples, joint):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        dim = samples[0].accel.size if samples else 0
        w.writerow(["joint", "d", "target"] + [f"v{i}" for i in range(dim)])
        for s in samples:
            w.writerow([joint, repr(s.d), repr(s.target)] + [repr(float(v)) for v in s.accel])


def read_labels_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    joint = None
    out = []
    for r in rows[1:]:
        joint = int(r[0])
        out.append(LabeledSample(accel=np.array([float(v) for v in r[3:]]), d=float(r[1])))
    return joint, out
