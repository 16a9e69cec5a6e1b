"""Feature data model: contour arcs, region correspondences and their file format."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
from scipy.optimize import least_squares

from .errors import ParseError, SchemaVersionMismatch
from .geometry import GenCircle, ImageFrame

SCHEMA_VERSION = "1"
DIRECTION_TAGS = ("primary", "aux1", "aux2", "aux3")
# vertex pairs of an affine frame whose joins give the auxiliary directions
AUX_PAIRS = ((0, 1), (0, 2), (1, 2))


class FitWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# circle fitting
# --------------------------------------------------------------------------


def _normalize_points(points):
    pts = np.asarray(points, float)
    m = pts.mean(axis=0)
    k = np.sqrt(np.mean(np.sum((pts - m) ** 2, axis=1)))
    if k == 0:
        k = 1.0
    return (pts - m) / k, m, k


def _taubin_normalized(P: np.ndarray) -> GenCircle:
    z = np.sum(P * P, axis=1)
    zm = z.mean()
    z0 = (z - zm) / (2.0 * np.sqrt(zm))
    _, s, Vt = np.linalg.svd(np.column_stack([z0, P[:, 0], P[:, 1]]), full_matrices=False)
    v = Vt[-1]
    A = v[0] / (2.0 * np.sqrt(zm))
    return GenCircle(A, v[1], v[2], -zm * A)


def fit_circle_taubin(points) -> GenCircle:
    """Taubin algebraic circle fit.

    Solved as the smallest singular direction of the centered, scaled
    design matrix [(z - mean z) / 2 sqrt(mean z), x, y]. Collinear input
    yields the A = 0 line fit and a FitWarning.
    """
    pts = np.asarray(points, float)
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    P, m, k = _normalize_points(pts)
    c = _taubin_normalized(P)
    if abs(c.A) < 1e-12:
        warnings.warn("points are collinear; returning a line fit", FitWarning)
        c = GenCircle(0.0, c.B, c.C, c.D)
    return c.transformed(1.0 / k, -m / k)


def _pratt_params(c: GenCircle) -> np.ndarray:
    c = c.normalized()
    return np.array([c.A, np.arctan2(c.C, c.B), c.D])


def _pratt_circle(x) -> GenCircle:
    A, th, D = x
    Q = np.sqrt(max(1.0 + 4.0 * A * D, 0.0))
    return GenCircle(A, Q * np.cos(th), Q * np.sin(th), D)


def _geo_residuals(x, P):
    A, th, D = x
    Q = np.sqrt(max(1.0 + 4.0 * A * D, 1e-300))
    B, C = Q * np.cos(th), Q * np.sin(th)
    px, py = P[:, 0], P[:, 1]
    r = px * px + py * py
    F = A * r + B * px + C * py + D
    u, v = 2 * A * px + B, 2 * A * py + C
    G = np.hypot(u, v)
    return 2.0 * F / (G + 1.0), (A, B, C, D, Q, px, py, r, F, u, v, G)


def _geo_jac(x, P):
    _, (A, B, C, D, Q, px, py, r, F, u, v, G) = _geo_residuals(x, P)
    cs, sn = B / Q, C / Q
    QA, QD = 2 * D / Q, 2 * A / Q
    FA = r + QA * (cs * px + sn * py)
    FD = 1.0 + QD * (cs * px + sn * py)
    Ft = -C * px + B * py
    uA, vA = 2 * px + QA * cs, 2 * py + QA * sn
    uD, vD = QD * cs, QD * sn
    ut, vt = -C, B
    Gs = np.maximum(G, 1e-300)
    den = G + 1.0
    cols = []
    for Fp, up, vp in ((FA, uA, vA), (Ft, ut, vt), (FD, uD, vD)):
        Gp = (u * up + v * vp) / Gs
        cols.append(2.0 * Fp / den - 2.0 * F * Gp / den**2)
    return np.column_stack(cols)


def geometric_cost(points, circle: GenCircle) -> float:
    """Sum of squared orthogonal point-to-circle distances."""
    return float(np.sum(circle.distance(points) ** 2))


def refine_circle_geometric(points, init: GenCircle, max_iter: int = 100) -> GenCircle:
    """Maximum-likelihood circle: minimizes the summed squared orthogonal distance.

    Levenberg-Marquardt over (A, theta, D) with B^2 + C^2 - 4AD = 1, a
    parameterization that stays regular as the circle degenerates to a line.
    Never returns a circle with a higher cost than ``init``.
    """
    pts = np.asarray(points, float)
    P, m, k = _normalize_points(pts)
    c0 = init.transformed(k, m)
    x0 = _pratt_params(c0)
    res = least_squares(
        lambda x: _geo_residuals(x, P)[0],
        x0,
        jac=lambda x: _geo_jac(x, P),
        method="lm",
        max_nfev=max_iter,
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
    )
    if res.status == 0:
        warnings.warn("circle refinement hit the iteration limit", FitWarning)
    best = _pratt_circle(res.x)
    if np.sum(best.distance(P) ** 2) > np.sum(c0.distance(P) ** 2):
        best = c0
    return best.transformed(1.0 / k, -m / k)


def fit_circle(points, refine: bool = True) -> GenCircle:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitWarning)
        c = fit_circle_taubin(points)
        if not refine:
            return c
        pts = np.asarray(points, float)
        spread = np.ptp(pts, axis=0).max()
        if np.max(c.distance(pts)) <= 1e-12 * spread:
            return c  # already exact; refinement cannot lower the cost
        return refine_circle_geometric(points, c)


# --------------------------------------------------------------------------
# data model
# --------------------------------------------------------------------------


def project_to_circle(circle: GenCircle, p) -> np.ndarray:
    p = np.asarray(p, float)
    g = circle.gradient(p)
    gn = np.linalg.norm(g)
    d = 2.0 * circle(p) / (gn + np.sqrt(max(circle.disc, 0.0)))
    return p - d * g / gn


def _median_arclength_index(pts: np.ndarray) -> int:
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    return int(np.argmin(np.abs(s - s[-1] / 2.0)))


@dataclass
class ContourArc:
    """Contour points with their fitted circle, midpoint and midpoint normal.

    The midpoint is the contour point of median arc length, projected onto
    the fitted circle; the normal is the unit circle normal there, pointing
    toward the center.
    """

    points: np.ndarray
    circle: GenCircle
    midpoint: np.ndarray
    normal: np.ndarray
    group: Optional[int] = None
    id: int = 0

    @classmethod
    def from_points(cls, points, group=None, id=0, refine=True) -> "ContourArc":
        pts = np.asarray(points, float)
        if len(pts) < 5:
            raise ValueError("an arc needs at least 5 points")
        circle = fit_circle(pts, refine=refine)
        mid = project_to_circle(circle, pts[_median_arclength_index(pts)])
        n = circle.gradient(mid)
        n = n / np.linalg.norm(n)
        if circle.A > 0:
            n = -n
        return cls(pts, circle, mid, n, group, id)

    def subtended_angle(self) -> float:
        """Angle (radians) the contour subtends on its fitted circle."""
        if self.circle.is_line:
            return 0.0
        chord = np.linalg.norm(self.points[-1] - self.points[0])
        return float(2.0 * np.arcsin(min(1.0, chord / (2.0 * self.circle.radius))))

    def in_frame(self, frame: ImageFrame) -> "ContourArc":
        """Copy expressed in the normalized coordinates of ``frame``."""
        return ContourArc(
            frame.to_norm(self.points),
            self.circle.transformed(frame.scale, frame.center),
            frame.to_norm(self.midpoint),
            self.normal.copy(),
            self.group,
            self.id,
        )

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.circle.distance(self.points) ** 2)))


@dataclass
class PointCorrespondence:
    """Two points whose join is the image of a scene line of a known direction."""

    p: np.ndarray
    q: np.ndarray
    direction_tag: str = "primary"
    region_id: Optional[int] = None

    def in_frame(self, frame: ImageFrame) -> "PointCorrespondence":
        return PointCorrespondence(
            frame.to_norm(self.p), frame.to_norm(self.q), self.direction_tag, self.region_id
        )


def _triangle_area(t) -> float:
    t = np.asarray(t, float)
    a, b = t[1] - t[0], t[2] - t[0]
    return 0.5 * abs(a[0] * b[1] - a[1] * b[0])


@dataclass
class RegionCorrespondence:
    """A pair of affine frames (three points each) related by a scene translation."""

    frame_a: np.ndarray
    frame_b: np.ndarray
    group: Optional[int] = None
    id: int = 0

    def __post_init__(self):
        self.frame_a = np.asarray(self.frame_a, float).reshape(3, 2)
        self.frame_b = np.asarray(self.frame_b, float).reshape(3, 2)
        for fr in (self.frame_a, self.frame_b):
            if _triangle_area(fr) <= 1e-6:
                raise ValueError("affine frame is collinear")

    def in_frame(self, frame: ImageFrame) -> "RegionCorrespondence":
        rc = object.__new__(RegionCorrespondence)
        rc.frame_a = frame.to_norm(self.frame_a)
        rc.frame_b = frame.to_norm(self.frame_b)
        rc.group, rc.id = self.group, self.id
        return rc

    @property
    def points(self) -> np.ndarray:
        return np.vstack([self.frame_a, self.frame_b])


def point_correspondences(rc: RegionCorrespondence, min_sep: float = 1e-9) -> list[PointCorrespondence]:
    """Point pairs along the four translation directions of a region correspondence.

    The primary direction joins frame_a[i] to frame_b[i]. Each auxiliary
    direction k joins two vertices within frame_a, paired with the same two
    vertices within frame_b, so its two lines are parallel in the scene.
    Pairs of coincident points are dropped.
    """
    out = []
    for i in range(3):
        p, q = rc.frame_a[i], rc.frame_b[i]
        if np.linalg.norm(p - q) > min_sep:
            out.append(PointCorrespondence(p, q, "primary", rc.id))
    for k, (i, j) in enumerate(AUX_PAIRS, start=1):
        for fr in (rc.frame_a, rc.frame_b):
            out.append(PointCorrespondence(fr[i], fr[j], f"aux{k}", rc.id))
    return out


def pcs_by_direction(rc: RegionCorrespondence) -> dict[str, list[PointCorrespondence]]:
    groups: dict[str, list[PointCorrespondence]] = {t: [] for t in DIRECTION_TAGS}
    for pc in point_correspondences(rc):
        groups[pc.direction_tag].append(pc)
    return groups


@dataclass
class FeatureSet:
    image_size: tuple[int, int]
    arcs: list[ContourArc] = field(default_factory=list)
    regions: list[RegionCorrespondence] = field(default_factory=list)

    @property
    def frame(self) -> ImageFrame:
        return ImageFrame(*self.image_size)

    def normalized(self) -> "FeatureSet":
        fr = self.frame
        return FeatureSet(
            self.image_size,
            [a.in_frame(fr) for a in self.arcs],
            [r.in_frame(fr) for r in self.regions],
        )

    def arc_groups(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for i, a in enumerate(self.arcs):
            if a.group is not None:
                out.setdefault(a.group, []).append(i)
        return out

    def __len__(self):
        return len(self.arcs) + len(self.regions)


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------

_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_GROUP = {"type": ["integer", "null"]}
FEATURE_SCHEMA = {
    "type": "object",
    "required": ["version", "image"],
    "properties": {
        "version": {"type": "string"},
        "image": {
            "type": "object",
            "required": ["width", "height"],
            "properties": {
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
            },
        },
        "arcs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "points"],
                "properties": {
                    "id": {"type": "integer"},
                    "group": _GROUP,
                    "points": {"type": "array", "items": _POINT, "minItems": 5},
                },
            },
        },
        "regions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "frame_a", "frame_b"],
                "properties": {
                    "id": {"type": "integer"},
                    "group": _GROUP,
                    "frame_a": {"type": "array", "items": _POINT, "minItems": 3, "maxItems": 3},
                    "frame_b": {"type": "array", "items": _POINT, "minItems": 3, "maxItems": 3},
                },
            },
        },
    },
}


def features_to_dict(fs: FeatureSet) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "image": {"width": int(fs.image_size[0]), "height": int(fs.image_size[1])},
        "arcs": [
            {"id": int(a.id), "group": a.group, "points": np.asarray(a.points).tolist()} for a in fs.arcs
        ],
        "regions": [
            {
                "id": int(r.id),
                "group": r.group,
                "frame_a": r.frame_a.tolist(),
                "frame_b": r.frame_b.tolist(),
            }
            for r in fs.regions
        ],
    }


def _where(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def features_from_dict(d, min_arc_angle_deg: float = 0.0) -> FeatureSet:
    """Build a FeatureSet from a parsed feature document; circles are refit.

    Arcs subtending less than ``min_arc_angle_deg`` on their fitted circle
    are dropped.
    """
    try:
        jsonschema.validate(d, FEATURE_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ParseError(f"{_where(e)}: {e.message}") from None
    if d["version"] != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"version {d['version']!r}, expected {SCHEMA_VERSION!r}")
    w, h = d["image"]["width"], d["image"]["height"]

    def check(pts, where):
        pts = np.asarray(pts, float)
        if not np.all(np.isfinite(pts)):
            raise ParseError(f"{where}: non-finite coordinate")
        if np.any(pts < 0) or np.any(pts[:, 0] > w) or np.any(pts[:, 1] > h):
            raise ParseError(f"{where}: coordinate outside the image")
        return pts

    arcs = []
    for i, a in enumerate(d.get("arcs", [])):
        pts = check(a["points"], f"arcs/{i}/points")
        try:
            arc = ContourArc.from_points(pts, a.get("group"), a["id"])
        except (ValueError, np.linalg.LinAlgError) as e:
            raise ParseError(f"arcs/{i}: {e}") from None
        if np.degrees(arc.subtended_angle()) < min_arc_angle_deg:
            continue
        arcs.append(arc)
    regions = []
    for i, r in enumerate(d.get("regions", [])):
        fa = check(r["frame_a"], f"regions/{i}/frame_a")
        fb = check(r["frame_b"], f"regions/{i}/frame_b")
        try:
            regions.append(RegionCorrespondence(fa, fb, r.get("group"), r["id"]))
        except ValueError as e:
            raise ParseError(f"regions/{i}: {e}") from None
    return FeatureSet((w, h), arcs, regions)


def load_features(path, min_arc_angle_deg: float = 0.0) -> FeatureSet:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not UTF-8 ({e})") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    return features_from_dict(d, min_arc_angle_deg)


def save_features(fs: FeatureSet, path) -> None:
    d = features_to_dict(fs)
    jsonschema.validate(d, FEATURE_SCHEMA)
    Path(path).write_text(json.dumps(d), encoding="utf-8")
