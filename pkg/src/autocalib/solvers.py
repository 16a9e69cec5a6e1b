"""Minimal solvers for distortion, vanishing line, focal length and orientation.

Every solver works in normalized image coordinates (see
:class:`autocalib.geometry.ImageFrame`). Undistorted lines are affine in the
division parameter: line(lam) = const + lam * lin, with ``lin`` always having
a zero third coordinate. Meets of two such lines are vanishing points whose
coordinates are polynomials of degrees (1, 1, 2) in lam.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .errors import (
    AutocalibError,
    DegenerateGeometry,
    DegeneratePC,
    DegenerateSample,
    IdealPoint,
    IdenticalLines,
    ImaginaryFocal,
    NoRealRoot,
    NotOrthogonal,
    ZeroPolynomial,
)
from .features import ContourArc, PointCorrespondence
from .geometry import nearest_rotation
from .poly import Poly, common_real_roots, quartic_real_roots, real_roots

LAM_RANGE = (-0.95, 0.5)
MIN_UNDISTORT_DENOM = 0.05
ORTHO_TOL = 1e-6

LinePoly = tuple[np.ndarray, np.ndarray]

SOLVERS = ("4PC+2CA", "2PC+4CA", "5CA*", "6CA", "6PC")
# vp-set sizes per (solver, shape); "c" = arc items, "p" = point correspondences
CONFIGURATIONS = {
    ("4PC+2CA", "coplanar"): ("pp", "pp", "cc"),
    ("4PC+2CA", "manhattan"): ("ppp", "c", "c"),
    ("2PC+4CA", "coplanar"): ("pp", "cc", "cc"),
    ("2PC+4CA", "manhattan"): ("pp", "cc", "cc"),
    ("5CA*", "coplanar"): ("ccc", "cc"),
    ("5CA*", "manhattan"): ("ccc", "c", "c"),
    ("6CA", "coplanar"): ("cc", "cc", "cc"),
    ("6CA", "manhattan"): ("cc", "cc", "cc"),
    ("6PC", "coplanar"): ("pp", "pp", "pp"),
}
PATHS = tuple(CONFIGURATIONS)


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors (cheaper than np.cross for single vectors)."""
    a0, a1, a2 = float(a[0]), float(a[1]), float(a[2])
    b0, b1, b2 = float(b[0]), float(b[1]), float(b[2])
    return np.array([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])


def admissible(lam: float, corner_r2: float = 1.0) -> bool:
    """Range gate on lam (normalized units) plus a non-folding undistortion."""
    return LAM_RANGE[0] < lam < LAM_RANGE[1] and 1.0 + lam * corner_r2 > MIN_UNDISTORT_DENOM


# --------------------------------------------------------------------------
# line constructions
# --------------------------------------------------------------------------


def line_from_arc(arc: ContourArc) -> LinePoly:
    """Undistorted tangent line at the arc midpoint: s(lam) = s0 + lam s1."""
    x, y = arc.midpoint
    nx, ny = arc.normal
    s0 = np.array([nx, ny, -(nx * x + ny * y)])
    s1 = np.array([nx * x * x + 2 * ny * x * y - nx * y * y, ny * y * y + 2 * nx * x * y - ny * x * x, 0.0])
    return s0, s1


def line_from_pc(pc: PointCorrespondence) -> LinePoly:
    """Join of the undistorted points: t(lam) = g(p, lam) x g(q, lam)."""
    (px, py), (qx, qy) = pc.p, pc.q
    if np.hypot(px - qx, py - qy) < 1e-9:
        raise DegeneratePC("point correspondence joins a point to itself")
    rp, rq = px * px + py * py, qx * qx + qy * qy
    t0 = np.array([py - qy, qx - px, px * qy - py * qx])
    t1 = np.array([py * rq - qy * rp, qx * rp - px * rq, 0.0])
    return t0, t1


def line_poly(item) -> LinePoly:
    if isinstance(item, PointCorrespondence):
        return line_from_pc(item)
    return line_from_arc(item)


def line_at(lp: LinePoly, lam: float) -> np.ndarray:
    return lp[0] + lam * lp[1]


# --------------------------------------------------------------------------
# vanishing-point polynomials
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VpPoly:
    ux: Poly
    uy: Poly
    uw: Poly
    provenance: str = "arc-pair"

    def __post_init__(self):
        if self.ux.degree > 1 or self.uy.degree > 1 or self.uw.degree > 2:
            raise ValueError("vanishing point polynomial exceeds degrees (1, 1, 2)")

    def __call__(self, lam: float) -> np.ndarray:
        return np.array([self.ux(lam), self.uy(lam), self.uw(lam)])

    def norm(self) -> float:
        return max(self.ux.norm(), self.uy.norm(), self.uw.norm())

    def scaled(self, s: float) -> "VpPoly":
        return VpPoly(self.ux * s, self.uy * s, self.uw * s, self.provenance)


def vp_poly(a: LinePoly, b: LinePoly, provenance: str = "arc-pair") -> VpPoly:
    """Symbolic meet of two lambda-affine lines, scaled to unit coefficient norm."""
    a0, a1 = a
    b0, b1 = b
    c0 = cross3(a0, b0)
    c1 = cross3(a0, b1) + cross3(a1, b0)
    c2 = cross3(a1, b1)  # a1, b1 have zero w: only the w entry survives
    scale = max(np.abs(np.concatenate([a0, a1])).max() * np.abs(np.concatenate([b0, b1])).max(), 1e-300)
    coef = np.array([c0, c1, c2])
    big = np.abs(coef).max()
    if big <= 1e-12 * scale:
        raise IdenticalLines("the two lines coincide for every lambda")
    coef = coef / big
    return VpPoly(
        Poly([coef[0, 0], coef[1, 0]]),
        Poly([coef[0, 1], coef[1, 1]]),
        Poly([coef[0, 2], coef[1, 2], coef[2, 2]]),
        provenance,
    )


def vp_from_items(a, b) -> VpPoly:
    prov = "pc-pair" if isinstance(a, PointCorrespondence) else "arc-pair"
    return vp_poly(line_poly(a), line_poly(b), prov)


def det_u(v1: VpPoly, v2: VpPoly, v3: VpPoly) -> Poly:
    """det of the matrix with rows v1, v2, v3 as a polynomial in lam."""
    return (
        v1.ux * (v2.uy * v3.uw - v2.uw * v3.uy)
        - v1.uy * (v2.ux * v3.uw - v2.uw * v3.ux)
        + v1.uw * (v2.ux * v3.uy - v2.uy * v3.ux)
    )


def manhattan_eliminants(v1: VpPoly, v2: VpPoly, v3: VpPoly):
    """Polynomials q_ij, p_ij and the f^2-free equations e1, e2 (degree <= 6)."""
    vs = (v1, v2, v3)
    q, p = {}, {}
    for i, j in ((0, 1), (0, 2), (1, 2)):
        q[i, j] = vs[i].ux * vs[j].ux + vs[i].uy * vs[j].uy
        p[i, j] = vs[i].uw * vs[j].uw
    e1 = q[0, 1] * p[0, 2] - q[0, 2] * p[0, 1]
    e2 = q[0, 1] * p[1, 2] - q[1, 2] * p[0, 1]
    assert e1.degree <= 6 and e2.degree <= 6
    return q, p, e1, e2


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------


@dataclass
class SolverOutput:
    """One candidate calibration in normalized units.

    ``vps`` is aligned with the vanishing-point slots of the sample that
    produced it. ``ortho_pair`` names the two slots assumed orthogonal when a
    focal length was recovered.
    """

    lam: float
    mode: str
    vps: list = field(default_factory=list)
    vanishing_line: Optional[np.ndarray] = None
    f: Optional[float] = None
    R: Optional[np.ndarray] = None
    ortho_pair: Optional[tuple[int, int]] = None
    solver: str = ""

    @property
    def has_frame(self) -> bool:
        return self.f is not None and self.R is not None

    def frame_vps(self) -> list[np.ndarray]:
        """Images K R e_i of the Manhattan axes (requires f and R)."""
        K = np.diag([self.f, self.f, 1.0])
        return [K @ self.R[:, i] for i in range(3)]


def ortho_residual(u1, u2, f: float) -> float:
    """Cosine between the rays K^-1 u1 and K^-1 u2."""
    a = np.array([u1[0] / f, u1[1] / f, u1[2]])
    b = np.array([u2[0] / f, u2[1] / f, u2[2]])
    return float(abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def focal_from_two_vps(u1, u2) -> float:
    """Focal length from two finite vanishing points of orthogonal directions."""
    u1, u2 = np.asarray(u1, float), np.asarray(u2, float)
    den = -u1[2] * u2[2]
    if abs(den) <= 1e-14 * np.linalg.norm(u1) * np.linalg.norm(u2):
        raise IdealPoint("a vanishing point is at infinity")
    rad = (u1[0] * u2[0] + u1[1] * u2[1]) / den
    if not rad > 0:
        raise ImaginaryFocal(f"f^2 = {rad}")
    return float(np.sqrt(rad))


def rotation_from_vps(u1, u2, f: float, tol: float = ORTHO_TOL) -> np.ndarray:
    """Camera rotation whose first two columns back-project u1 and u2."""
    u1, u2 = np.asarray(u1, float), np.asarray(u2, float)
    res = ortho_residual(u1, u2, f)
    if res > tol:
        raise NotOrthogonal(f"orthogonality residual {res:.3g}")
    Kinv = np.diag([1.0 / f, 1.0 / f, 1.0])
    K = np.diag([f, f, 1.0])
    c1 = Kinv @ u1
    c2 = Kinv @ u2
    c3 = K.T @ cross3(u1, u2)
    M = np.column_stack([c1 / np.linalg.norm(c1), c2 / np.linalg.norm(c2), c3 / np.linalg.norm(c3)])
    if np.linalg.det(M) < 0:
        M[:, 2] *= -1
    return nearest_rotation(M)


def _null_vector(M: np.ndarray) -> tuple[np.ndarray, float]:
    """Smallest right singular vector and the sigma2/sigma1 rank indicator."""
    _, s, Vt = np.linalg.svd(M)
    return Vt[-1], s[1] / max(s[0], 1e-300)


# --------------------------------------------------------------------------
# core solvers
# --------------------------------------------------------------------------


def solve_coplanar(v1: VpPoly, v2: VpPoly, v3: VpPoly) -> list[SolverOutput]:
    """Distortion and vanishing line from three coplanar vanishing points."""
    d = det_u(v1, v2, v3)
    assert d.degree <= 4
    if d.is_zero() or d.norm() <= 1e-12:
        raise DegenerateSample("det U vanishes for every lambda")
    roots = [r for r in quartic_real_roots(d) if admissible(r)]
    if not roots:
        raise NoRealRoot("no admissible root of det U")
    out = []
    for lam in roots:
        U = np.array([v1(lam), v2(lam), v3(lam)])
        l, rank2 = _null_vector(U)
        if rank2 < 1e-8:
            continue  # two or more vanishing points coincide; l is unconstrained
        out.append(SolverOutput(lam, "coplanar", list(U), l))
    if not out:
        raise DegenerateSample("coincident vanishing points at every root")
    return out


def solve_manhattan(v1: VpPoly, v2: VpPoly, v3: VpPoly, ortho_tol: float = ORTHO_TOL) -> list[SolverOutput]:
    """Distortion, focal length and rotation from three orthogonal vanishing points.

    Candidates are the real roots of the two f^2-free eliminants. Each keeps
    the squared focal length shared by the two orthogonality equations its
    eliminant encodes and must satisfy the remaining equation to within
    ``ortho_tol`` (cosine between back-projected rays). With noiseless input
    this is exactly the common-root condition; with noise the remaining
    equation holds only approximately, since three orthogonality
    constraints overdetermine the two unknowns.
    """
    q, p, e1, e2 = manhattan_eliminants(v1, v2, v3)
    if (e1.is_zero() or e1.norm() <= 1e-14) and (e2.is_zero() or e2.norm() <= 1e-14):
        raise DegenerateSample("orthogonality eliminants vanish identically")
    cands: list[tuple[float, tuple]] = []
    for e, pairs in ((e1, ((0, 1), (0, 2))), (e2, ((0, 1), (1, 2)))):
        if e.is_zero() or e.norm() <= 1e-14:
            continue
        for r in real_roots(e):
            if admissible(r) and not any(abs(r - c) <= 1e-8 * max(1.0, abs(r)) for c, _ in cands):
                cands.append((r, pairs))
    if not cands:
        raise NoRealRoot("no admissible root of the orthogonality eliminants")
    vs = (v1, v2, v3)
    out = []
    imaginary = 0
    for lam, pairs in cands:
        u = [vs[i](lam) for i in range(3)]
        u = [x / np.linalg.norm(x) for x in u]
        qs = np.array([u[i][0] * u[j][0] + u[i][1] * u[j][1] for i, j in pairs])
        ps = np.array([u[i][2] * u[j][2] for i, j in pairs])
        den = ps @ ps
        if den <= 1e-300:
            continue
        f2 = -(qs @ ps) / den
        if not f2 > 0:
            imaginary += 1
            continue
        f = float(np.sqrt(f2))
        if max(ortho_residual(u[i], u[j], f) for i, j in ((0, 1), (0, 2), (1, 2))) > ortho_tol:
            continue
        try:
            R = rotation_from_vps(u[0], u[1], f, tol=max(ortho_tol, 1e-6))
        except NotOrthogonal:
            continue
        out.append(SolverOutput(lam, "manhattan", u, None, f, R, (0, 1)))
    if not out:
        if imaginary:
            raise ImaginaryFocal("no candidate with positive f^2")
        raise NoRealRoot("no candidate satisfies all orthogonality constraints")
    return out


def coincidence_polys(va: VpPoly, vb: VpPoly) -> tuple[Poly, Poly, Poly]:
    """Components of va x vb, of degrees <= (3, 3, 2)."""
    cx = va.uy * vb.uw - va.uw * vb.uy
    cy = va.uw * vb.ux - va.ux * vb.uw
    cw = va.ux * vb.uy - va.uy * vb.ux
    assert cx.degree <= 3 and cy.degree <= 3 and cw.degree <= 2
    return cx, cy, cw


def solve_coincident(va: VpPoly, vb: VpPoly, tol: float = 1e-8) -> list[float]:
    """Admissible lam at which two vanishing points of one direction coincide."""
    polys = coincidence_polys(va, vb)
    big = max(p.norm() for p in polys)
    if big <= 1e-14:
        raise ZeroPolynomial("vanishing points coincide for every lambda")
    # members that are zero up to cancellation error carry no information
    kept = [p if p.norm() > 1e-7 * big else Poly([0.0]) for p in polys]
    return [r for r in common_real_roots(kept, tol) if admissible(r)]


def _triple_vp(lines: Sequence[LinePoly], lam: float) -> np.ndarray:
    L = np.array([line_at(lp, lam) for lp in lines])
    L /= np.linalg.norm(L[:, :2], axis=1, keepdims=True)
    return _null_vector(L)[0]


def _unit_point(lp: LinePoly, lam: float):
    """Closest point (w = 1) of the undistorted line to the origin, and its direction."""
    a, b, c = line_at(lp, lam)
    n2 = a * a + b * b
    if n2 <= 1e-300:
        raise DegenerateGeometry("line at infinity")
    p = np.array([-a * c / n2, -b * c / n2, 1.0])
    d = np.array([-b, a, 0.0]) / np.sqrt(n2)
    return p, d


def solve_manhattan_step2(u1, lam: float, arc2, arc3) -> list[tuple[float, np.ndarray, np.ndarray]]:
    """Focal length and two more vanishing points given one vanishing point and lam.

    u2 and u3 are parameterized on the undistorted lines of arc2 and arc3;
    the two orthogonality equations with u1 are linear in (t w, w) with
    w = 1/f^2, and substituting them into u2 . u3 = 0 gives a quadratic in w.
    """
    u1 = np.asarray(u1, float)
    u1 = u1 / np.linalg.norm(u1)
    p2, d2 = _unit_point(line_poly(arc2), lam)
    p3, d3 = _unit_point(line_poly(arc3), lam)
    a2, a3 = u1[:2] @ p2[:2], u1[:2] @ p3[:2]
    b2, b3 = u1[:2] @ d2[:2], u1[:2] @ d3[:2]
    uw = u1[2]
    if min(abs(b2), abs(b3)) <= 1e-12:
        raise DegenerateGeometry("a line direction is orthogonal to the first vanishing point")
    pp, dp, pd, dd = p2[:2] @ p3[:2], d2[:2] @ p3[:2], p2[:2] @ d3[:2], d2[:2] @ d3[:2]
    c2 = pp * b2 * b3 - a2 * b3 * dp - a3 * b2 * pd + a2 * a3 * dd
    c1 = -uw * b3 * dp - uw * b2 * pd + uw * (a2 + a3) * dd + b2 * b3
    c0 = uw * uw * dd
    try:
        ws = quartic_real_roots(Poly([c0, c1, c2]))
    except ZeroPolynomial:
        raise DegenerateGeometry("second-stage system vanishes identically") from None
    out = []
    for w in ws:
        if not w > 0:
            continue
        u2 = p2 + (-(w * a2 + uw) / b2 / w) * d2
        u3 = p3 + (-(w * a3 + uw) / b3 / w) * d3
        out.append((float(1.0 / np.sqrt(w)), u2, u3))
    if not out:
        raise ImaginaryFocal("no positive 1/f^2 root")
    return out


# --------------------------------------------------------------------------
# solver variants
# --------------------------------------------------------------------------


@dataclass
class MinimalSample:
    """Features grouped into vanishing-point slots for one solver variant.

    ``vp_sets[k]`` holds the arcs or point correspondences (normalized
    coordinates) that construct slot k. ``shape`` is None when the coplanar
    and Manhattan configurations share one input shape and both run.
    """

    solver: str
    vp_sets: list
    shape: Optional[str] = None
    arc_ids: list = field(default_factory=list)
    region_ids: list = field(default_factory=list)
    pc_tags: list = field(default_factory=list)


def _upgrade_coplanar(out: SolverOutput) -> list[SolverOutput]:
    """Focal length and rotation for each vanishing-point pair that admits one.

    Pairs are ordered by decreasing |w1 w2| so the most finite pair leads.
    """
    vps = out.vps
    pairs = sorted(combinations(range(len(vps)), 2), key=lambda ij: -abs(vps[ij[0]][2] * vps[ij[1]][2]))
    ups = []
    for i, j in pairs:
        try:
            f = focal_from_two_vps(vps[i], vps[j])
            R = rotation_from_vps(vps[i], vps[j], f)
        except AutocalibError:
            continue
        ups.append(SolverOutput(out.lam, out.mode, vps, out.vanishing_line, f, R, (i, j)))
    return ups or [out]


def _coplanar_three(vps: list[VpPoly]) -> list[SolverOutput]:
    out = []
    for cand in solve_coplanar(*vps):
        out.extend(_upgrade_coplanar(cand))
    return out


def _chain(sample: MinimalSample, manhattan: bool) -> list[SolverOutput]:
    triple = [line_poly(x) for x in sample.vp_sets[0]]
    va = vp_poly(triple[0], triple[1])
    vb = vp_poly(triple[0], triple[2])
    lams = solve_coincident(va, vb)
    if not lams:
        raise NoRealRoot("no admissible coincidence root")
    out = []
    for lam in lams:
        u1 = _triple_vp(triple, lam)
        if manhattan:
            a2, a3 = sample.vp_sets[1][0], sample.vp_sets[2][0]
            try:
                sols = solve_manhattan_step2(u1, lam, a2, a3)
            except AutocalibError:
                continue
            for f, u2, u3 in sols:
                try:
                    R = rotation_from_vps(u1, u2, f)
                except NotOrthogonal:
                    continue
                out.append(SolverOutput(lam, "manhattan", [u1, u2, u3], None, f, R, (0, 1)))
        else:
            pa, pb = (line_poly(x) for x in sample.vp_sets[1])
            u2 = cross3(line_at(pa, lam), line_at(pb, lam))
            if np.linalg.norm(u2) <= 1e-300:
                continue
            u2 = u2 / np.linalg.norm(u2)
            l = cross3(u1, u2)
            cand = SolverOutput(lam, "coplanar", [u1, u2], l / np.linalg.norm(l))
            try:
                f = focal_from_two_vps(u1, u2)
                cand.f, cand.R, cand.ortho_pair = f, rotation_from_vps(u1, u2, f), (0, 1)
            except AutocalibError:
                pass
            out.append(cand)
    return out


def _slot_group(items) -> Optional[int]:
    """Shared direction group of an all-arc slot, or None when unknown or mixed."""
    groups = {getattr(x, "group", None) if isinstance(x, ContourArc) else None for x in items}
    return groups.pop() if len(groups) == 1 else None


def dispatch(sample: MinimalSample, ortho_tol: float = ORTHO_TOL) -> list[SolverOutput]:
    """Run every core solver that applies to the sample's configuration.

    Three-slot samples of pairs run the coplanar solver (with focal upgrade)
    and, unless the shape forbids it, the Manhattan solver. Samples led by
    a same-direction triple run the coincidence chain. Raises
    DegenerateSample when two arc slots carry the same known direction
    group, and otherwise only when every applicable path failed.
    """
    sizes = [len(s) for s in sample.vp_sets]
    labels = [_slot_group(s) for s in sample.vp_sets]
    known = [g for g in labels if g is not None]
    if len(known) != len(set(known)):
        raise DegenerateSample("two vanishing-point slots come from one direction group")
    errors: list[AutocalibError] = []
    out: list[SolverOutput] = []
    if sizes[0] == 3:
        manhattan = sizes[1:] == [1, 1]
        try:
            out = _chain(sample, manhattan)
        except AutocalibError as e:
            errors.append(e)
    else:
        try:
            vps = [vp_from_items(*s) for s in sample.vp_sets]
        except AutocalibError as e:
            raise DegenerateSample(str(e)) from e
        if sample.shape in (None, "coplanar"):
            try:
                out += _coplanar_three(vps)
            except AutocalibError as e:
                errors.append(e)
        if sample.shape in (None, "manhattan") and sample.solver != "6PC":
            try:
                out += solve_manhattan(*vps, ortho_tol=ortho_tol)
            except AutocalibError as e:
                errors.append(e)
    for o in out:
        o.solver = sample.solver
    if not out and errors:
        raise DegenerateSample("; ".join(f"{type(e).__name__}: {e}" for e in errors))
    return out
