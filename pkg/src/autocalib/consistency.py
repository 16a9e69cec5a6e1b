"""Consistency of features with a candidate calibration.

A feature is consistent with a vanishing point u when its points lie on the
distorted image of the line joining its (undistorted) midpoint to u. The
residual J is the mean squared orthogonal distance of the feature points to
that circle. Everything here runs in normalized coordinates; callers convert
J to px^2 by multiplying with the squared frame scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import IdealJoin
from .features import ContourArc, FeatureSet, PointCorrespondence, RegionCorrespondence, pcs_by_direction
from .geometry import GenCircle, circle_distance, dehom, distort_line, distort_lines, undistort

CONTOUR_THRESHOLD = 1.26
POINT_THRESHOLD = 5.05
_JOIN_EPS = 1e-12


@dataclass(frozen=True)
class ConsistencyResult:
    J: float  # px^2
    threshold: float  # px

    @property
    def inlier(self) -> bool:
        return bool(np.sqrt(self.J) <= self.threshold)


def circle_through_vp(midpoint, u, lam: float) -> GenCircle:
    """Distorted image of the undistorted line joining the midpoint and u."""
    xbar = undistort(np.asarray(midpoint, float)[:2], lam)
    u = np.asarray(u, float)
    m = np.cross(xbar, u)
    if np.linalg.norm(m) <= _JOIN_EPS * np.linalg.norm(xbar) * np.linalg.norm(u):
        raise IdealJoin("midpoint coincides with the vanishing point")
    return distort_line(m, lam)


def _undistorted_mid(p, q, lam: float) -> np.ndarray:
    """Midpoint (w = 1) of the undistorted images of p and q."""
    return np.concatenate([0.5 * (dehom(undistort(p, lam)) + dehom(undistort(q, lam))), [1.0]])


def pc_circle(pc: PointCorrespondence, u, lam: float) -> GenCircle:
    """Circle through the vanishing point for a point correspondence.

    The joined midpoint is the midpoint of the undistorted endpoints, so at
    the true calibration the circle passes through both points exactly.
    """
    m = np.cross(_undistorted_mid(pc.p, pc.q, lam), np.asarray(u, float))
    if np.linalg.norm(m) <= _JOIN_EPS * np.linalg.norm(u):
        raise IdealJoin("correspondence midpoint coincides with the vanishing point")
    return distort_line(m, lam)


def arc_consistency(arc: ContourArc | np.ndarray, circle: GenCircle) -> float:
    """Mean squared orthogonal distance of the contour points to the circle."""
    pts = arc.points if isinstance(arc, ContourArc) else np.atleast_2d(np.asarray(arc, float))
    return float(np.mean(circle.distance(pts) ** 2))


def pc_consistency(pcs: Sequence[PointCorrespondence], u, lam: float) -> float:
    d = []
    for pc in pcs:
        c = pc_circle(pc, u, lam)
        d += [c.distance(pc.p), c.distance(pc.q)]
    return float(np.mean(np.square(d)))


@dataclass(frozen=True)
class VpOnLine:
    point: np.ndarray
    residual: float
    ideal: bool = False


def _pc_lines(pcs: Sequence[PointCorrespondence], lam: float) -> np.ndarray:
    from .solvers import line_at, line_from_pc

    M = np.array([line_at(line_from_pc(pc), lam) for pc in pcs])
    return M / np.linalg.norm(M[:, :2], axis=1, keepdims=True)


def vp_on_line(pcs: Sequence[PointCorrespondence], l, lam: float) -> VpOnLine:
    """Least-squares vanishing point of the correspondence lines, constrained to l.

    Points of l with w = 1 are p0 + t d; rows are the correspondence lines
    scaled to unit normals, and t solves the 1-D least-squares problem. When
    l is the line at infinity the ideal point minimizing the residual is
    returned and flagged.
    """
    if not pcs:
        raise ValueError("need at least one point correspondence")
    M = _pc_lines(pcs, lam)
    a, b, c = np.asarray(l, float)
    n = np.hypot(a, b)
    if n <= 1e-12 * abs(c):
        _, _, Vt = np.linalg.svd(M[:, :2])
        u = np.array([Vt[-1][0], Vt[-1][1], 0.0])
        return VpOnLine(u, float(np.linalg.norm(M @ u)), True)
    a, b, c = a / n, b / n, c / n
    p0 = np.array([-a * c, -b * c, 1.0])
    d = np.array([-b, a, 0.0])
    ap, bd = M @ p0, M @ d
    den = bd @ bd
    if den <= 1e-300:
        return VpOnLine(d, float(np.linalg.norm(M @ d)), True)
    u = p0 - (ap @ bd) / den * d
    return VpOnLine(u, float(np.linalg.norm(M @ u)))


# --------------------------------------------------------------------------
# vectorized scoring
# --------------------------------------------------------------------------


def candidate_vps(cand) -> np.ndarray:
    vps = list(cand.vps)
    if cand.has_frame:
        vps = cand.frame_vps() + vps
    return np.array(vps, float).reshape(-1, 3)


def candidate_lines(cand) -> np.ndarray:
    lines = []
    if cand.vanishing_line is not None:
        lines.append(np.asarray(cand.vanishing_line, float))
    if cand.has_frame:
        Kit = np.diag([1.0 / cand.f, 1.0 / cand.f, 1.0])
        lines += [Kit @ cand.R[:, k] for k in range(3)]
    return np.array(lines, float).reshape(-1, 3)


@dataclass
class FeatureArrays:
    """Padded arrays of a normalized feature set for batched residuals."""

    arc_pts: np.ndarray  # (n, P, 2), padded with the last point
    arc_w: np.ndarray  # (n, P) 1/count on real points, 0 on padding
    arc_mid: np.ndarray  # (n, 2)
    reg_p: np.ndarray  # (m, 3, 2) frame_a
    reg_q: np.ndarray  # (m, 3, 2) frame_b
    scale: float

    @classmethod
    def from_features(cls, fs_norm: FeatureSet, scale: float) -> "FeatureArrays":
        n = len(fs_norm.arcs)
        P = max((len(a.points) for a in fs_norm.arcs), default=1)
        pts = np.zeros((n, P, 2))
        w = np.zeros((n, P))
        mid = np.zeros((n, 2))
        for i, a in enumerate(fs_norm.arcs):
            k = len(a.points)
            pts[i, :k] = a.points
            pts[i, k:] = a.points[-1]
            w[i, :k] = 1.0 / k
            mid[i] = a.midpoint
        m = len(fs_norm.regions)
        rp = np.array([r.frame_a for r in fs_norm.regions]).reshape(m, 3, 2)
        rq = np.array([r.frame_b for r in fs_norm.regions]).reshape(m, 3, 2)
        return cls(pts, w, mid, rp, rq, scale)

    @property
    def n_arcs(self) -> int:
        return len(self.arc_mid)

    @property
    def n_regions(self) -> int:
        return len(self.reg_p)

    def arc_J(self, lam: float, vps: np.ndarray) -> np.ndarray:
        """(k, n) residuals (px^2) of every arc against each of k vanishing points."""
        if self.n_arcs == 0 or len(vps) == 0:
            return np.full((len(vps), self.n_arcs), np.inf)
        xbar = undistort(self.arc_mid, lam)
        m = np.cross(xbar[None, :, :], vps[:, None, :])
        coef = distort_lines(m, lam)
        with np.errstate(invalid="ignore", divide="ignore"):
            d = circle_distance(coef[:, :, None, :], self.arc_pts[None])
            J = np.einsum("knp,np->kn", d * d, self.arc_w)
        return np.where(np.isfinite(J), J, np.inf) * self.scale**2

    def region_J(self, lam: float, lines: np.ndarray) -> np.ndarray:
        """(k, m) residuals (px^2) of every region's primary points, per vanishing line."""
        if self.n_regions == 0 or len(lines) == 0:
            return np.full((len(lines), self.n_regions), np.inf)
        gp = undistort(self.reg_p, lam)  # (m, 3, 3)
        gq = undistort(self.reg_q, lam)
        t = np.cross(gp, gq)
        t = t / np.linalg.norm(t[..., :2], axis=-1, keepdims=True)
        L = lines / np.linalg.norm(lines[:, :2], axis=1, keepdims=True)
        a, b, c = L[:, 0], L[:, 1], L[:, 2]
        p0 = np.stack([-a * c, -b * c, np.ones_like(a)], axis=1)  # (k, 3)
        dd = np.stack([-b, a, np.zeros_like(a)], axis=1)
        ap = np.einsum("mjc,kc->kmj", t, p0)
        bd = np.einsum("mjc,kc->kmj", t, dd)
        with np.errstate(invalid="ignore", divide="ignore"):
            tt = -np.sum(ap * bd, axis=2) / np.sum(bd * bd, axis=2)  # (k, m)
            u = p0[:, None, :] + tt[..., None] * dd[:, None, :]  # (k, m, 3)
            mid = 0.5 * (gp[..., :2] / gp[..., 2:] + gq[..., :2] / gq[..., 2:])
            midh = np.concatenate([mid, np.ones(mid.shape[:-1] + (1,))], axis=-1)  # (m, 3, 3)
            mline = np.cross(midh[None], u[:, :, None, :])  # (k, m, 3, 3)
            coef = distort_lines(mline, lam)
            dp = circle_distance(coef, self.reg_p[None])
            dq = circle_distance(coef, self.reg_q[None])
            J = (np.sum(dp * dp, axis=2) + np.sum(dq * dq, axis=2)) / 6.0
        return np.where(np.isfinite(J), J, np.inf) * self.scale**2

    def residuals(self, cand) -> tuple[np.ndarray, np.ndarray]:
        """Best residual (px^2) per arc and per region for a candidate."""
        vps = candidate_vps(cand)
        lines = candidate_lines(cand)
        ja = self.arc_J(cand.lam, vps).min(axis=0) if len(vps) else np.full(self.n_arcs, np.inf)
        jr = self.region_J(cand.lam, lines).min(axis=0) if len(lines) else np.full(self.n_regions, np.inf)
        return ja, jr


# --------------------------------------------------------------------------
# minimal-sample rejection
# --------------------------------------------------------------------------


def reject_minimal_sample(
    sample,
    cand,
    thresholds=(CONTOUR_THRESHOLD, POINT_THRESHOLD),
    scale: float = 1.0,
    regions: Optional[dict] = None,
) -> bool:
    """True when a measurement the solver did not use contradicts the candidate.

    Arcs are checked over their full contours against the vanishing point of
    their slot. For every region that supplied correspondences, its unused
    directions are checked through the best vanishing point on a candidate
    vanishing line. ``regions`` maps region id to RegionCorrespondence
    (normalized); ``scale`` converts normalized distances to pixels.
    """
    t_arc, t_pt = thresholds
    if not (np.isfinite(t_arc) or np.isfinite(t_pt)):
        return False
    s2 = scale * scale
    vps = cand.vps
    slots = list(range(len(sample.vp_sets)))
    for k in slots:
        if k >= len(vps):
            break
        for item in sample.vp_sets[k]:
            try:
                if isinstance(item, ContourArc):
                    J = arc_consistency(item, circle_through_vp(item.midpoint, vps[k], cand.lam)) * s2
                    if J > t_arc * t_arc:
                        return True
                else:
                    if pc_consistency([item], vps[k], cand.lam) * s2 > t_pt * t_pt:
                        return True
            except IdealJoin:
                return True
    if not regions or not np.isfinite(t_pt):
        return False
    used = {}
    for k in slots:
        for item in sample.vp_sets[k]:
            if isinstance(item, PointCorrespondence) and item.region_id is not None:
                used.setdefault(item.region_id, set()).add(item.direction_tag)
    lines = candidate_lines(cand)
    if not len(lines):
        return False
    for rid, tags in used.items():
        rc = regions.get(rid)
        if rc is None:
            continue
        unused = {t: v for t, v in pcs_by_direction(rc).items() if t not in tags and v}
        if not unused:
            continue
        ok = False
        for l in lines:
            worst = 0.0
            for pcs in unused.values():
                try:
                    u = vp_on_line(pcs, l, cand.lam).point
                    worst = max(worst, pc_consistency(pcs, u, cand.lam) * s2)
                except (IdealJoin, ValueError):
                    worst = np.inf
            if worst <= t_pt * t_pt:
                ok = True
                break
        if not ok:
            return True
    return False
