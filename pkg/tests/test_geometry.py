import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from autocalib.errors import MissingRotation, OutOfRange
from autocalib.geometry import (
    Calibration,
    DegenerateWarning,
    GenCircle,
    ImageFrame,
    affine_rectify_homography,
    circle_distance,
    dehom,
    distort,
    distort_line,
    distort_points,
    metric_rectify_homography,
    undistort,
)

AIT_LAM = -2.4951e-7
AIT_F = 1126.3


# --- division model ---------------------------------------------------------


def test_undistort_fixes_center():
    assert undistort([0.0, 0.0], -0.3) == pytest.approx([0, 0, 1])


def test_undistort_zero_lambda():
    assert undistort([100.0, 50.0], 0.0) == pytest.approx([100, 50, 1])


def test_undistort_ait_value():
    u = undistort([1000.0, 0.0], AIT_LAM)
    assert u[2] == pytest.approx(1 + AIT_LAM * 1e6, abs=1e-12)
    assert u[2] == pytest.approx(0.75049, abs=1e-9)
    assert dehom(u)[0] == pytest.approx(1000 / 0.75049, rel=1e-12)
    # the quoted figure 1332.45... is truncated; direct evaluation gives 1332.463
    assert dehom(u)[0] == pytest.approx(1332.45, abs=0.02)


def test_distort_inverts_ait_value():
    d = distort(np.array([1000 / 0.75049, 0.0, 1.0]), AIT_LAM)
    assert dehom(d) == pytest.approx([1000, 0], abs=1e-9)


def test_distort_zero_lambda_is_identity():
    assert distort(np.array([3.0, -4.0, 1.0]), 0.0) == pytest.approx([3, -4, 1])


def test_distort_out_of_range():
    # pincushion distortion has no real radius for r_u > 1 / (2 sqrt(lam))
    with pytest.raises(OutOfRange):
        distort(np.array([10.0, 0.0, 1.0]), 0.1)


def test_distort_ideal_point_lands_on_horizon():
    d = distort_points(np.array([1.0, 0.0, 0.0]), -0.25)
    assert np.hypot(*d) == pytest.approx(2.0)


def test_roundtrip_grid():
    fr = ImageFrame(3000, 2000)
    xs, ys = np.meshgrid(np.linspace(0, 3000, 41), np.linspace(0, 2000, 41))
    pix = np.column_stack([xs.ravel(), ys.ravel()])
    for lam_n in np.linspace(-0.35, 0.05, 9):
        lam = fr.lam_to_px(lam_n)
        c = pix - fr.center
        back = distort_points(undistort(c, lam), lam)
        assert np.max(np.abs(back - c)) < 1e-9


@given(
    st.floats(-0.35, 0.05),
    st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=50),
)
def test_roundtrip_property(lam, pts):
    pts = np.array(pts) / np.sqrt(2)
    back = distort_points(undistort(pts, lam), lam)
    assert np.max(np.abs(back - pts)) < 1e-12


def test_frame_normalization():
    fr = ImageFrame(3000, 2000)
    assert fr.scale == pytest.approx(np.hypot(1500, 1000))
    corner = fr.to_norm([3000, 2000])
    assert np.hypot(*corner) == pytest.approx(1.0)
    assert fr.to_pixels(corner) == pytest.approx([3000, 2000])
    assert fr.lam_to_px(fr.lam_to_norm(AIT_LAM)) == pytest.approx(AIT_LAM)
    # a pixel line and its normalized version pass through corresponding points
    l = np.array([0.3, -1.0, 250.0])
    p = np.array([400.0, 0.3 * 400 + 250.0])
    assert fr.line_to_norm(l) @ np.append(p / fr.scale, 1) == pytest.approx(0, abs=1e-12)
    assert fr.line_to_centered(fr.line_to_norm(l)) == pytest.approx(l)


# --- lines and circles ------------------------------------------------------


def test_distort_line_example():
    c = distort_line([0.0, 1.0, -0.5], -0.25)
    assert c.A == pytest.approx(0.125)
    k = c.normalized()
    assert k.center == pytest.approx([0, -4])
    assert k.radius == pytest.approx(np.sqrt(20))
    # oracle: sample circle points, undistort, check incidence with the line
    t = np.linspace(0, 2 * np.pi, 100, endpoint=False)
    pts = np.column_stack([np.sqrt(20) * np.cos(t), -4 + np.sqrt(20) * np.sin(t)])
    u = undistort(pts, -0.25)
    assert np.max(np.abs(u @ np.array([0.0, 1.0, -0.5]))) < 1e-12


def test_distort_line_through_center_is_fixed():
    c = distort_line([1.0, 0.0, 0.0], -0.4)
    assert c.is_line
    assert c.coeffs == pytest.approx([0, 1, 0, 0])


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_distort_line_zero_lambda(a, b, c):
    if np.hypot(a, b) < 1e-3:
        return
    g = distort_line([a, b, c], 0.0)
    assert g.is_line and g.coeffs == pytest.approx([0, a, b, c])


def test_circle_distance():
    c = GenCircle(1.0, 0.0, 0.0, -1.0)  # unit circle
    pts = np.array([[2.0, 0.0], [0.0, 0.5], [0.0, -1.0]])
    assert c.distance(pts) == pytest.approx([1.0, 0.5, 0.0])
    assert circle_distance(c.coeffs[None], pts[:, None])[:, 0] == pytest.approx([1.0, 0.5, 0.0])
    line = GenCircle(0.0, 0.0, 2.0, -2.0)  # y = 1
    assert line.distance(np.array([[5.0, 4.0]])) == pytest.approx([3.0])


# --- homographies -------------------------------------------------------------


def test_affine_identity_for_line_at_infinity():
    with pytest.warns(DegenerateWarning):
        H = affine_rectify_homography([0.0, 0.0, 1.0])
    assert H == pytest.approx(np.eye(3))


def test_affine_sends_line_to_infinity():
    H = affine_rectify_homography([0.0, 1.0, -5.0])
    for x in np.linspace(-100, 100, 7):
        assert (H @ [x, 5.0, 1.0])[2] == pytest.approx(0, abs=1e-12)


def _random_camera(seed):
    rng = np.random.default_rng(seed)
    R = Rotation.from_rotvec(rng.normal(size=3) * 0.4).as_matrix() @ Rotation.from_euler("xy", [20, 45], degrees=True).as_matrix()
    return R, np.diag([AIT_F, AIT_F, 1.0])


@pytest.mark.parametrize("seed", range(5))
def test_affine_rectification_restores_parallelism(seed):
    R, K = _random_camera(seed)
    # plane X . e2 = 10 in the world; camera at origin, x = K R X
    l = np.linalg.inv(K).T @ R[:, 2]
    H = affine_rectify_homography(l)
    rng = np.random.default_rng(seed)
    dirs = []
    for _ in range(3):
        X0 = np.array([*rng.uniform(-5, 5, 2), 10.0])
        X1 = X0 + np.array([1.0, 0.3, 0.0]) * 4
        a, b = (H @ K @ R @ X for X in (X0, X1))
        d = a[:2] / a[2] - b[:2] / b[2]
        dirs.append(d / np.linalg.norm(d))
    for d in dirs[1:]:
        assert abs(dirs[0][0] * d[1] - dirs[0][1] * d[0]) < 1e-9


def test_metric_identity():
    c = Calibration(0.0, 800.0, (640, 480), R=np.eye(3))
    assert metric_rectify_homography(c) == pytest.approx(np.eye(3))


def test_metric_plain_rotation_for_unit_k():
    th = 0.3
    R = Rotation.from_euler("z", th).as_matrix()
    c = Calibration(0.0, 1.0, (640, 480), R=R)
    assert metric_rectify_homography(c) == pytest.approx(Rotation.from_euler("z", -th).as_matrix())


def test_metric_missing_rotation():
    with pytest.raises(MissingRotation):
        metric_rectify_homography(Calibration(0.0, 800.0, (640, 480)))


@pytest.mark.parametrize("plane", [0, 1, 2])
def test_metric_rectification_restores_right_angles(plane):
    R, K = _random_camera(plane + 10)
    c = Calibration(0.0, AIT_F, (3000, 2250), R=R)
    H = metric_rectify_homography(c, plane)
    i, j = (plane + 1) % 3, (plane + 2) % 3
    e = np.eye(3)
    X0 = 20 * R.T @ np.array([0.0, 0.0, 1.0])  # a point in front of the camera
    sq = [X0, X0 + 2 * e[i], X0 + 2 * e[i] + 2 * e[j], X0 + 2 * e[j]]
    img = [H @ K @ R @ X for X in sq]
    P = np.array([p[:2] / p[2] for p in img])
    for k in range(4):
        a, b = P[k - 1] - P[k], P[(k + 1) % 4] - P[k]
        ang = np.arccos(a @ b / np.linalg.norm(a) / np.linalg.norm(b))
        assert abs(ang - np.pi / 2) < 1e-6


# --- calibration --------------------------------------------------------------


def test_calibration_dict_roundtrip():
    R = Rotation.from_rotvec([0.1, 0.2, -0.3]).as_matrix()
    c = Calibration(AIT_LAM, AIT_F, (3000, 2250), R=R, vanishing_line=np.array([1e-4, 2e-4, 1.0]), vps=[np.ones(3)])
    d = c.to_dict()
    assert d["lambda_norm"] == pytest.approx(AIT_LAM * 1875.0**2)
    c2 = Calibration.from_dict(d)
    assert c2.lam == c.lam and c2.f == c.f and tuple(c2.image_size) == (3000, 2250)
    assert np.allclose(c2.R, R) and np.allclose(c2.vanishing_line, c.vanishing_line)


def test_calibration_rejects_non_rotation():
    with pytest.raises(ValueError):
        Calibration(0.0, 1.0, (10, 10), R=np.diag([1.0, 1.0, -1.0]))
