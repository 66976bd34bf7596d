import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from motionudf import rotations as rot
from motionudf.errors import DegenerateRotationError

from conftest import central_diff, max_rel_err

vec3 = arrays(np.float64, 3, elements=st.floats(-3.0, 3.0))


@settings(max_examples=60, deadline=None)
@given(vec3)
def test_rodrigues_matches_scipy(aa):
    np.testing.assert_allclose(rot.axis_angle_to_matrix(aa), Rotation.from_rotvec(aa).as_matrix(), atol=1e-12)


def test_rodrigues_small_angle_branch():
    aa = np.array([1e-9, -2e-9, 5e-10])
    R = rot.axis_angle_to_matrix(aa)
    np.testing.assert_allclose(R, np.eye(3) + rot.skew(aa), atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-2.5, 2.5)))
def test_axis_angle_round_trip(aa):
    back = rot.matrix_to_axis_angle(rot.axis_angle_to_matrix(aa))
    np.testing.assert_allclose(rot.axis_angle_to_matrix(back), rot.axis_angle_to_matrix(aa), atol=1e-12)


def test_near_pi_round_trip():
    aa = np.array([0.0, 0.0, np.pi - 1e-7])
    R = rot.axis_angle_to_matrix(aa)
    np.testing.assert_allclose(rot.axis_angle_to_matrix(rot.matrix_to_axis_angle(R)), R, atol=1e-9)


def test_sixd_round_trip_and_orthonormal(rng):
    aa = rng.normal(size=(50, 3))
    R = rot.axis_angle_to_matrix(aa)
    np.testing.assert_allclose(rot.sixd_to_matrix(rot.matrix_to_sixd(R)), R, atol=1e-12)
    raw = rng.normal(size=(50, 6))
    M = rot.sixd_to_matrix(raw)
    np.testing.assert_allclose(M @ np.swapaxes(M, -1, -2), np.broadcast_to(np.eye(3), M.shape), atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(M), 1.0, atol=1e-12)


def test_sixd_degenerate_reports_location():
    x = np.array([[1.0, 0, 0, 2.0, 0, 0]])
    with pytest.raises(DegenerateRotationError, match="entry 0"):
        rot.sixd_to_matrix(x)
    with pytest.raises(DegenerateRotationError, match="frame 3"):
        rot.sixd_to_matrix(x, where=lambda i: "frame 3")


def test_sixd_vjp_matches_finite_differences(rng):
    x = rng.normal(size=(4, 6))
    G = rng.normal(size=(4, 3, 3))
    analytic = rot.sixd_to_matrix_vjp(x, G)
    numeric = central_diff(lambda v: float(np.sum(rot.sixd_to_matrix(v) * G)), x)
    assert max_rel_err(analytic, numeric) < 1e-6


def test_left_jacobian_definition(rng):
    aa = rng.normal(size=3)
    R = rot.axis_angle_to_matrix(aa)
    J = rot.left_jacobian(aa)
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        dR = (rot.axis_angle_to_matrix(aa + e) - rot.axis_angle_to_matrix(aa - e)) / (2 * h)
        np.testing.assert_allclose(dR @ R.T, rot.skew(J[:, k]), atol=1e-8)


def test_euler_order_is_intrinsic():
    R = rot.euler_to_matrix([30.0, 45.0, 60.0], "ZXY")
    expect = (Rotation.from_euler("z", 30, degrees=True) * Rotation.from_euler("x", 45, degrees=True)
              * Rotation.from_euler("y", 60, degrees=True)).as_matrix()
    np.testing.assert_allclose(R, expect, atol=1e-12)
