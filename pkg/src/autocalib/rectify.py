"""Image undistortion and rectification by inverse mapping with bilinear sampling."""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import MissingRotation
from .geometry import Calibration, affine_rectify_homography, distort_points, hom, metric_rectify_homography, undistort

MODES = ("undistort", "affine", "metric")


def output_homography(calib: Calibration, mode: str, plane: Optional[int] = None) -> np.ndarray:
    """Homography applied to undistorted, principal-point-centered pixels."""
    if mode == "undistort":
        return np.eye(3)
    if mode == "affine":
        if calib.vanishing_line is None:
            if calib.R is None:
                raise MissingRotation("affine mode needs a vanishing line or a rotation")
            k = 2 if plane is None else plane
            l = np.diag([1.0 / calib.f, 1.0 / calib.f, 1.0]) @ calib.R[:, k]
        else:
            l = np.asarray(calib.vanishing_line, float)
        # scale so that the homography preserves pixel size near the image center
        H = affine_rectify_homography(l)
        return H / H[2, 2] if abs(H[2, 2]) > 1e-12 else H
    if mode == "metric":
        return metric_rectify_homography(calib, plane)
    raise ValueError(f"unknown mode {mode!r}")


def _border(width: int, height: int, n: int = 200) -> np.ndarray:
    xs = np.linspace(0, width - 1, n)
    ys = np.linspace(0, height - 1, n)
    return np.vstack(
        [
            np.column_stack([xs, np.zeros(n)]),
            np.column_stack([xs, np.full(n, height - 1.0)]),
            np.column_stack([np.zeros(n), ys]),
            np.column_stack([np.full(n, width - 1.0), ys]),
        ]
    )


def rectify_image(
    img: np.ndarray,
    calib: Calibration,
    mode: str = "undistort",
    plane: Optional[int] = None,
    max_side: Optional[int] = None,
) -> tuple[np.ndarray, dict]:
    """Warp an image; output pixels are inverse-mapped through homography and distortion.

    The output frame is fitted to the warped image border and scaled down
    when its larger side would exceed ``max_side`` (default twice the input's
    larger side). Pixels mapping outside the source are black.
    """
    img = np.asarray(img)
    H_img, W_img = img.shape[:2]
    if max_side is None:
        max_side = 2 * max(H_img, W_img)
    c = calib.principal_point
    Hm = output_homography(calib, mode, plane)
    b = _border(W_img, H_img) - c
    q = (Hm @ undistort(b, calib.lam).T).T
    ok = q[:, 2] > 1e-12
    if not np.any(ok):
        raise ValueError("image border maps behind the rectifying camera")
    pts = q[ok, :2] / q[ok, 2:3]
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = hi - lo
    scale = min(1.0, max_side / max(float(extent.max()), 1.0))
    out_w = int(np.floor(extent[0] * scale)) + 1
    out_h = int(np.floor(extent[1] * scale)) + 1
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(float)
    Q = np.stack([xs.ravel() / scale + lo[0], ys.ravel() / scale + lo[1], np.ones(xs.size)], axis=1)
    U = (np.linalg.inv(Hm) @ Q.T).T
    src = distort_points(U, calib.lam) + c
    src[~np.isfinite(src)] = -1e6
    coords = [src[:, 1].reshape(out_h, out_w), src[:, 0].reshape(out_h, out_w)]
    planes = img[..., None] if img.ndim == 2 else img
    out = np.stack(
        [map_coordinates(planes[..., ch].astype(float), coords, order=1, cval=0.0, mode="constant") for ch in range(planes.shape[2])],
        axis=-1,
    )
    if img.ndim == 2:
        out = out[..., 0]
    meta = {"mode": mode, "plane": plane, "homography": Hm.tolist(), "offset": lo.tolist(), "scale": scale}
    return out, meta


def to_uint8(a: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(a), 0, 255).astype(np.uint8)
