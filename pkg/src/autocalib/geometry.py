"""Projective primitives, the division model and rectifying homographies.

All functions are unit-agnostic: the distortion parameter must simply be
expressed in the same units as the coordinates (pixels centered on the
distortion center, or normalized units from :class:`ImageFrame`).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import MissingRotation, OutOfRange


# --------------------------------------------------------------------------
# coordinate frames
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ImageFrame:
    """Maps pixel coordinates to the normalized frame the solvers work in.

    Pixels are shifted to the image center and divided by the half
    diagonal, so the image corners sit at radius 1.
    """

    width: float
    height: float

    @property
    def center(self) -> np.ndarray:
        return np.array([self.width / 2.0, self.height / 2.0])

    @property
    def scale(self) -> float:
        return float(np.hypot(self.width, self.height) / 2.0)

    def to_norm(self, pts) -> np.ndarray:
        return (np.asarray(pts, float) - self.center) / self.scale

    def to_pixels(self, pts) -> np.ndarray:
        return np.asarray(pts, float) * self.scale + self.center

    def lam_to_norm(self, lam_px: float) -> float:
        return lam_px * self.scale**2

    def lam_to_px(self, lam_norm: float) -> float:
        return lam_norm / self.scale**2

    def line_to_centered(self, l) -> np.ndarray:
        """Normalized homogeneous line -> line in centered pixel coordinates."""
        l = np.asarray(l, float)
        return np.array([l[0] / self.scale, l[1] / self.scale, l[2]])

    def line_to_norm(self, l) -> np.ndarray:
        l = np.asarray(l, float)
        return np.array([l[0] * self.scale, l[1] * self.scale, l[2]])


# --------------------------------------------------------------------------
# homogeneous helpers
# --------------------------------------------------------------------------


def hom(pts) -> np.ndarray:
    """Append w=1 to (..., 2) points."""
    pts = np.asarray(pts, float)
    return np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1)


def dehom(pts) -> np.ndarray:
    pts = np.asarray(pts, float)
    return pts[..., :2] / pts[..., 2:3]


def unit(v) -> np.ndarray:
    v = np.asarray(v, float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def same_up_to_scale(a, b, tol: float = 1e-9) -> bool:
    """True when homogeneous vectors a and b are parallel."""
    a, b = unit(a), unit(b)
    return bool(np.linalg.norm(np.cross(a, b)) <= tol)


def nearest_rotation(M) -> np.ndarray:
    """Closest rotation (Frobenius) with det = +1."""
    U, _, Vt = np.linalg.svd(np.asarray(M, float))
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt
    return R


# --------------------------------------------------------------------------
# division model
# --------------------------------------------------------------------------


def undistort(p, lam: float) -> np.ndarray:
    """Division-model undistortion g(x, lam) = (x, y, 1 + lam r^2).

    Accepts (..., 2) inhomogeneous or (..., 3) homogeneous points; the
    homogeneous input is dehomogenized first. The result may be an ideal
    point when 1 + lam r^2 = 0.
    """
    p = np.asarray(p, float)
    if p.shape[-1] == 3:
        p = dehom(p)
    r2 = np.sum(p * p, axis=-1, keepdims=True)
    return np.concatenate([p, 1.0 + lam * r2], axis=-1)


def distort_points(u, lam: float) -> np.ndarray:
    """Inverse of :func:`undistort` for (..., 3) homogeneous points.

    Returns (..., 2) distorted points; NaN where no real radial root exists.
    The root branch is the one continuous at lam = 0. Ideal points map to
    the distortion horizon r = 1/sqrt(-lam) when lam < 0.
    """
    u = np.asarray(u, float)
    xy, w = u[..., :2], u[..., 2]
    rho = np.linalg.norm(xy, axis=-1)  # r_u * |w|
    absw = np.abs(w)
    sgn = np.where(w < 0, -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        # r_d = 2 r_u / (1 + sqrt(1 - 4 lam r_u^2)), scaled through by |w|
        disc = absw * absw - 4.0 * lam * rho * rho
        ratio = 2.0 / (absw + np.sqrt(disc))  # r_d / rho
        ratio = np.where(disc < 0, np.nan, ratio)
        out = xy * (sgn * ratio)[..., None]
    return out


def distort(p, lam: float) -> np.ndarray:
    """Distort homogeneous undistorted points; raises OutOfRange if impossible."""
    d = distort_points(p, lam)
    if not np.all(np.isfinite(d)):
        raise OutOfRange("no real radial root for at least one point")
    return hom(d)


# --------------------------------------------------------------------------
# circles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GenCircle:
    """Zero set of A (x^2 + y^2) + B x + C y + D; A = 0 gives a line."""

    A: float
    B: float
    C: float
    D: float

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([self.A, self.B, self.C, self.D])

    @property
    def is_line(self) -> bool:
        return abs(self.A) <= 1e-14 * max(abs(self.B), abs(self.C), abs(self.D), 1e-300)

    @property
    def disc(self) -> float:
        """B^2 + C^2 - 4AD, equal to (2 |A| r)^2 for a real circle."""
        return self.B**2 + self.C**2 - 4.0 * self.A * self.D

    @property
    def center(self) -> np.ndarray:
        return np.array([-self.B / (2 * self.A), -self.C / (2 * self.A)])

    @property
    def radius(self) -> float:
        return float(np.sqrt(self.disc) / (2.0 * abs(self.A)))

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float)
        x, y = pts[..., 0], pts[..., 1]
        return self.A * (x * x + y * y) + self.B * x + self.C * y + self.D

    def gradient(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float)
        return 2.0 * self.A * pts + np.array([self.B, self.C])

    def distance(self, pts) -> np.ndarray:
        """Orthogonal distance, stable as the circle flattens into a line."""
        return circle_distance(self.coeffs, pts)

    def normalized(self) -> "GenCircle":
        """Scaled so that B^2 + C^2 - 4AD = 1 with A >= 0."""
        s = np.sqrt(max(self.disc, 1e-300))
        if self.A < 0:
            s = -s
        return GenCircle(self.A / s, self.B / s, self.C / s, self.D / s)

    def transformed(self, scale: float, shift) -> "GenCircle":
        """Circle expressed in coordinates x' = (x - shift) / scale."""
        mx, my = shift
        A, B, C, D = self.A, self.B, self.C, self.D
        return GenCircle(
            A * scale * scale,
            (2 * A * mx + B) * scale,
            (2 * A * my + C) * scale,
            A * (mx * mx + my * my) + B * mx + C * my + D,
        )


def circle_distance(coeffs, pts) -> np.ndarray:
    """Distance from pts (..., 2) to generalized circles coeffs (..., 4).

    Uses d = 2|F| / (|grad F| + sqrt(B^2 + C^2 - 4AD)), exact for circles and
    lines alike. Broadcasts over leading dimensions.
    """
    coeffs = np.asarray(coeffs, float)
    pts = np.asarray(pts, float)
    A, B, C, D = (coeffs[..., i] for i in range(4))
    x, y = pts[..., 0], pts[..., 1]
    F = A * (x * x + y * y) + B * x + C * y + D
    gx = 2 * A * x + B
    gy = 2 * A * y + C
    disc = np.maximum(B * B + C * C - 4 * A * D, 0.0)
    return 2.0 * np.abs(F) / (np.hypot(gx, gy) + np.sqrt(disc))


def distort_line(l, lam: float) -> GenCircle:
    """Image under distortion of the undistorted line l = (a, b, c).

    Points satisfy l^T g(x, lam) = 0, i.e. lam c r^2 + a x + b y + c = 0.
    """
    a, b, c = (float(v) for v in l)
    return GenCircle(lam * c, a, b, c)


def distort_lines(ls, lam: float) -> np.ndarray:
    """Vectorized :func:`distort_line`: (..., 3) lines -> (..., 4) coefficients."""
    ls = np.asarray(ls, float)
    return np.stack([lam * ls[..., 2], ls[..., 0], ls[..., 1], ls[..., 2]], axis=-1)


# --------------------------------------------------------------------------
# calibration and rectification
# --------------------------------------------------------------------------


@dataclass
class Calibration:
    """Camera calibration in pixel units.

    ``lam`` is the division parameter in px^-2 and the vanishing line, when
    present, is expressed in pixel coordinates centered on the principal
    point (which is always the image center).
    """

    lam: float
    f: Optional[float]
    image_size: tuple[float, float]
    R: Optional[np.ndarray] = None
    vanishing_line: Optional[np.ndarray] = None
    vps: list = field(default_factory=list)

    def __post_init__(self):
        if self.R is not None:
            self.R = np.asarray(self.R, float)
            if not np.allclose(self.R.T @ self.R, np.eye(3), atol=1e-9) or np.linalg.det(self.R) < 0:
                raise ValueError("R is not a rotation")

    @property
    def frame(self) -> ImageFrame:
        return ImageFrame(*self.image_size)

    @property
    def principal_point(self) -> np.ndarray:
        return self.frame.center

    @property
    def K(self) -> np.ndarray:
        return np.diag([self.f, self.f, 1.0])

    @property
    def lam_norm(self) -> float:
        return self.frame.lam_to_norm(self.lam)

    def is_monotone(self, margin: float = 0.0) -> bool:
        """1 + lam r^2 > margin up to the image-corner radius."""
        r2 = self.frame.scale**2
        return 1.0 + self.lam * r2 > margin

    def to_dict(self) -> dict:
        d = {
            "lambda_px": self.lam,
            "lambda_norm": self.lam_norm,
            "norm_scale": self.frame.scale,
            "f": self.f,
            "principal_point": self.principal_point.tolist(),
            "image_size": list(self.image_size),
        }
        if self.R is not None:
            d["R"] = self.R.tolist()
        if self.vanishing_line is not None:
            d["vanishing_line"] = np.asarray(self.vanishing_line).tolist()
        if self.vps:
            d["vanishing_points"] = [np.asarray(v).tolist() for v in self.vps]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        size = tuple(d["image_size"])
        if "lambda_px" in d:
            lam = float(d["lambda_px"])
        else:
            lam = ImageFrame(*size).lam_to_px(float(d["lambda_norm"]))
        R = d.get("R")
        vl = d.get("vanishing_line")
        return cls(
            lam=lam,
            f=None if d.get("f") is None else float(d["f"]),
            image_size=size,
            R=None if R is None else np.array(R),
            vanishing_line=None if vl is None else np.array(vl),
            vps=[np.array(v) for v in d.get("vanishing_points", [])],
        )


class DegenerateWarning(UserWarning):
    pass


def affine_rectify_homography(l) -> np.ndarray:
    """Homography sending the vanishing line l to the line at infinity.

    Rows are [1 0 0; 0 1 0; l^T], with l scaled so that |(a, b)| = 1 (or
    c = 1 when l is already the line at infinity, which yields identity).
    """
    l = np.asarray(l, float)
    n = np.hypot(l[0], l[1])
    H = np.eye(3)
    if n <= 1e-12 * abs(l[2]):
        warnings.warn("vanishing line is already at infinity", DegenerateWarning)
        return H
    H[2] = l / n
    if H[2, 2] < 0:
        H[2] = -H[2]
    return H


def metric_rectify_homography(calib: Calibration, plane: Optional[int] = None) -> np.ndarray:
    """Conjugate rotation K R^T K^-1 about the principal point.

    With ``plane`` in {0, 1, 2} the Manhattan axes are permuted so that the
    plane whose normal is that axis becomes fronto-parallel.
    """
    if calib.R is None or calib.f is None:
        raise MissingRotation("calibration has no rotation")
    K = calib.K
    R = calib.R
    if plane is not None:
        # bring axis `plane` to the optical axis, keeping a right-handed frame
        order = [(plane + 1) % 3, (plane + 2) % 3, plane]
        R = R[:, order]
    return K @ R.T @ np.linalg.inv(K)
