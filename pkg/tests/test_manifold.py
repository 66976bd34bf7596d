import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from motionudf.errors import DimensionError, NotEnoughPointsError, SegmentLengthError
from motionudf.manifold import (VPTree, accel_dim, accel_distance, acceleration, acceleration_vjp,
                                all_accelerations, build_zero_level, knn_label, knn_scan, label_dataset,
                                label_distances, load_zero_level, make_zero_level, read_labels_csv,
                                save_zero_level, sliding_windows, write_labels_csv)
from motionudf.motion import synthetic_suite

from conftest import central_diff, max_rel_err


def test_acceleration_by_hand():
    p = np.zeros((5, 2, 3))
    p[:, 1, 0] = np.array([0.0, 1.0, 4.0, 9.0, 16.0])  # x = t^2, constant second difference 2
    a = acceleration(p, 1)
    assert a.shape == (accel_dim(5),)
    np.testing.assert_array_equal(a.reshape(3, 3), [[2, 0, 0]] * 3)
    np.testing.assert_array_equal(all_accelerations(p)[1], a)


def test_linear_motion_has_zero_acceleration(rng):
    t = np.arange(16.0)[:, None, None]
    p = rng.normal(size=(1, 4, 3)) + t * rng.normal(size=(1, 4, 3))
    np.testing.assert_allclose(all_accelerations(p), 0.0, atol=1e-12)


def test_acceleration_vjp_is_adjoint(rng):
    p = rng.normal(size=(3, 8, 4, 3))
    g = rng.normal(size=(3, 4, accel_dim(8)))
    lhs = np.sum(all_accelerations(p) * g)
    rhs = np.sum(p * acceleration_vjp(g, 8))
    assert np.isclose(lhs, rhs, rtol=1e-12)
    num = central_diff(lambda x: float(np.sum(all_accelerations(x) * g[0])), p[0])
    assert max_rel_err(acceleration_vjp(g[0], 8), num) < 1e-6


def test_sliding_windows(rng):
    p = rng.normal(size=(10, 2, 3))
    w = sliding_windows(p, 4)
    assert w.shape == (7, 4, 2, 3)
    np.testing.assert_array_equal(w[3], p[3:7])
    with pytest.raises(SegmentLengthError):
        sliding_windows(p, 11)


vecs = arrays(np.float64, 6, elements=st.floats(-10, 10))


@settings(max_examples=200, deadline=None)
@given(vecs, vecs, vecs)
def test_distance_axioms_property(a, b, c):
    dab, dba = accel_distance(a, b), accel_distance(b, a)
    assert dab >= 0 and dab == dba
    assert accel_distance(a, a) == 0
    assert accel_distance(a, c) <= dab + accel_distance(b, c) + 1e-9


def test_distance_is_l1_and_checks_shape():
    assert accel_distance([1, 2, 3], [0, 0, 0]) == 6
    assert np.isclose(accel_distance([3, 4, 0], [0, 0, 0], metric="l2"), 5)
    with pytest.raises(DimensionError):
        accel_distance([1, 2], [1, 2, 3])


def test_knn_label_by_hand():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 2, 0], [0, 0, 5]])
    zl = make_zero_level(pts, 0, 3, k=2)
    assert knn_label([0, 0, 0], zl, k=2) == 0.5
    assert knn_label([0, 0, 0], zl, k=3) == 1.0
    with pytest.raises(NotEnoughPointsError):
        knn_label([0, 0, 0], zl, k=5)
    with pytest.raises(DimensionError):
        knn_label([0, 0], zl, k=1)


def test_scan_ties_broken_by_index():
    pts = np.array([[1.0], [-1.0], [1.0], [3.0]])
    idx, d = knn_scan([0.0], pts, 3)
    np.testing.assert_array_equal(idx, [0, 1, 2])
    np.testing.assert_array_equal(d, [1, 1, 1])


@pytest.mark.parametrize("metric", ["l1", "l2"])
def test_vptree_equals_scan(metric, rng):
    pts = rng.normal(size=(700, 12))
    pts[100:120] = pts[0]  # duplicated rows exercise tie handling
    tree = VPTree(pts, leaf_size=8, metric=metric)
    for q in rng.normal(size=(60, 12)):
        i1, d1 = knn_scan(q, pts, 5, metric)
        i2, d2 = tree.query(q, 5)
        np.testing.assert_array_equal(i1, i2)
        np.testing.assert_array_equal(d1, d2)


def test_batch_labels_equal_single_labels(rng):
    zl = make_zero_level(rng.normal(size=(300, accel_dim(6))), 4, 6)
    qs = rng.normal(size=(25, accel_dim(6)))
    batch = label_distances(qs, zl)
    np.testing.assert_array_equal(batch, [knn_label(q, zl) for q in qs])
    np.testing.assert_array_equal(batch, label_distances(qs, zl, method="vptree"))


@pytest.fixture(scope="module")
def clean():
    return synthetic_suite(3, 40, seed=5)


def test_zero_level_build(clean):
    ref = np.concatenate([all_accelerations(sliding_windows(s.positions, 8))[:, 7] for s in clean])
    zl = build_zero_level(clean, 8, 7, seed=1)
    # bitwise-repeated windows (a still ankle) are kept once
    assert zl.size == len(np.unique(ref, axis=0)) and zl.dim == accel_dim(8)
    again = build_zero_level(clean, 8, 7, seed=1)
    np.testing.assert_array_equal(zl.points, again.points)
    capped = build_zero_level(clean, 8, 7, cap=10, seed=1)
    assert capped.size == 10
    strided = build_zero_level(clean, 8, 7, stride=4, seed=1)
    assert strided.size <= 3 * 9
    # every point is an acceleration of some clean window
    assert all(np.any(np.all(ref == p, axis=1)) for p in capped.points)


def test_zero_level_deduplicates():
    still = [np.zeros((20, 24, 3))]
    with pytest.raises(NotEnoughPointsError):
        build_zero_level(still, 8, 5)


def test_zero_level_points_label_zero(clean):
    zl = build_zero_level(clean, 8, 10, k=1)
    assert knn_label(zl.points[3], zl, k=1) == 0.0


def test_zero_level_file_round_trip(clean, tmp_path):
    zl = build_zero_level(clean, 8, 10)
    save_zero_level(zl, tmp_path / "z.zls")
    back = load_zero_level(tmp_path / "z.zls")
    assert back.joint_index == 10 and back.T == 8
    np.testing.assert_array_equal(back.points, zl.points)
    np.testing.assert_array_equal(back.std, zl.std)


def test_labels_csv_round_trip(rng, tmp_path):
    zl = make_zero_level(rng.normal(size=(50, 9)), 6, 5)
    samples = label_dataset(rng.normal(size=(7, 9)), zl)
    write_labels_csv(tmp_path / "l.csv", samples, 6)
    joint, back = read_labels_csv(tmp_path / "l.csv")
    assert joint == 6
    for a, b in zip(samples, back):
        assert a.d == b.d and a.target == np.log1p(a.d)
        np.testing.assert_array_equal(a.accel, b.accel)
