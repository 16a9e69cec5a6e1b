"""Forward synthesis of Manhattan scenes, their features and ground truth.

Scenes follow a street-view layout. Three axis-aligned line families are
drawn, plus an optional diagonal family lying in the facade plane, and
translated affine frames (repeats) are placed on that facade. Geometry is
projected with a camera at the world origin, distorted with the division
model and sampled as contour points, which are then circle-fitted like
detector output would be.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import Unprojectable
from .features import ContourArc, FeatureSet, RegionCorrespondence, point_correspondences
from .geometry import Calibration, ImageFrame, dehom, distort_points, hom, undistort
from .kvconfig import from_kv, to_kv

DIAGONAL_GROUP = 3
MAX_TRIES = 100


@dataclass
class SceneSpec:
    """Camera and scene parameters; unset camera fields are sampled.

    ``f`` is in pixels and ``lam`` in px^-2. ``region_plane`` is the Manhattan
    axis normal to the facade carrying the repeats and the diagonal lines;
    repeats translate along axis (region_plane + 1) % 3.
    """

    width: int = 3000
    height: int = 2000
    f: Optional[float] = None
    lam: Optional[float] = None
    R: Optional[np.ndarray] = None
    lines_per_direction: tuple = (4, 4, 4)
    diagonal_lines: int = 3
    regions: int = 3
    region_plane: int = 0
    points_per_arc: int = 30
    sigma: float = 0.0
    region_sigma: Optional[float] = None
    outlier_fraction: float = 0.0
    seed: int = 0
    f_range: tuple = (0.8, 1.5)
    lam_norm_range: tuple = (-0.85, 0.1)
    cone_deg: float = 30.0
    yaw_deg: float = 45.0
    pitch_deg: float = 20.0

    @property
    def frame(self) -> ImageFrame:
        return ImageFrame(self.width, self.height)

    @classmethod
    def from_kv(cls, text: str, **overrides) -> "SceneSpec":
        return from_kv(cls, text, **overrides)

    def to_kv(self) -> str:
        return to_kv(self)


@dataclass
class Scene:
    """Generated features (pixels) with ground truth and layout metadata."""

    features: FeatureSet
    calibration: Calibration
    translation_axis: int
    inplane_axis: int
    normal_axis: int
    outlier_arcs: list = field(default_factory=list)
    outlier_regions: list = field(default_factory=list)


def nominal_rotation(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    """World-to-camera rotation looking along yaw/pitch (world z up, camera y down)."""
    y, p = np.radians(yaw_deg), np.radians(pitch_deg)
    fwd = np.array([np.cos(p) * np.cos(y), np.cos(p) * np.sin(y), np.sin(p)])
    right = np.array([np.sin(y), -np.cos(y), 0.0])
    down = np.cross(fwd, right)
    return np.array([right, down, fwd])


def sample_rotation(rng, yaw_deg=45.0, pitch_deg=20.0, cone_deg=30.0) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0.0, cone_deg))
    return Rotation.from_rotvec(axis * angle).as_matrix() @ nominal_rotation(yaw_deg, pitch_deg)


def _inside(d: np.ndarray, hx: float, hy: float) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.isfinite(d).all(axis=-1) & (np.abs(d[..., 0]) <= hx) & (np.abs(d[..., 1]) <= hy)


def _random_image_point(rng, hx, hy, margin=0.05) -> np.ndarray:
    return np.array([rng.uniform(-hx, hx), rng.uniform(-hy, hy)]) * (1.0 - margin)


def _arc_through(line, x_u, lam, rng, n, hx, hy, length=(0.2, 0.5)) -> Optional[np.ndarray]:
    """Distorted contour of the undistorted line near x_u, or None if too short."""
    a, b = line[0], line[1]
    d = np.array([-b, a]) / np.hypot(a, b)
    reach = 2.0 * (1.0 / (1.0 + min(lam, 0.0)) + np.hypot(hx, hy))
    s = np.linspace(-reach, reach, 4001)
    D = distort_points(hom(x_u + s[:, None] * d), lam)
    ok = _inside(D, hx, hy)
    c = len(s) // 2
    if not ok[c]:
        return None
    lo, hi = c, c
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    while hi < len(s) - 1 and ok[hi + 1]:
        hi += 1
    seg = D[lo : hi + 1]
    arclen = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(seg, axis=0), axis=1))])
    total = arclen[-1]
    L = min(rng.uniform(*length), total)
    if L < 0.1:
        return None
    start = rng.uniform(0.0, total - L)
    sa, sb = np.interp([start, start + L], arclen, s[lo : hi + 1])
    ss = np.linspace(sa, sb, n)
    return distort_points(hom(x_u + ss[:, None] * d), lam)


def _line_family(vp, lam, count, group, rng, n, hx, hy, first_id) -> list[ContourArc]:
    arcs = []
    tries = 0
    while len(arcs) < count:
        tries += 1
        if tries > MAX_TRIES * max(count, 1):
            raise Unprojectable(f"could not place lines for group {group}")
        x_u = dehom(undistort(_random_image_point(rng, hx, hy), lam))
        line = np.cross(hom(x_u), vp)
        if np.hypot(line[0], line[1]) < 1e-12:
            continue
        pts = _arc_through(line, x_u, lam, rng, n, hx, hy)
        if pts is None:
            continue
        arcs.append((pts, group, first_id + len(arcs)))
    return arcs


def _project(X, K, R, lam, hx, hy) -> Optional[np.ndarray]:
    x = (K @ R @ np.asarray(X).T).T
    if np.any(x[:, 2] <= 1e-9):
        return None
    d = distort_points(x / x[:, 2:3], lam)
    if not np.all(_inside(d, hx, hy)):
        return None
    return d


def _region(K, R, lam, rng, hx, hy, i, j) -> tuple:
    e = np.eye(3)
    Rt_Kinv = R.T @ np.linalg.inv(K)
    for _ in range(MAX_TRIES):
        x_u = undistort(_random_image_point(rng, hx, hy, margin=0.2), lam)
        depth = rng.uniform(5.0, 15.0)
        ray = Rt_Kinv @ x_u
        X0 = depth * ray / np.linalg.norm(ray)
        s1 = rng.choice([-1, 1]) * rng.uniform(0.03, 0.08) * depth
        s2 = rng.choice([-1, 1]) * rng.uniform(0.03, 0.08) * depth
        th = np.radians(rng.uniform(30.0, 150.0))
        tau = rng.choice([-1, 1]) * rng.uniform(0.1, 0.3) * depth
        fa = np.array([X0, X0 + s1 * e[j], X0 + s2 * (np.cos(th) * e[i] + np.sin(th) * e[j])])
        fb = fa + tau * e[i]
        a = _project(fa, K, R, lam, hx, hy)
        b = _project(fb, K, R, lam, hx, hy)
        if a is not None and b is not None:
            return a, b
    raise Unprojectable("could not place a region correspondence in the image")


def _outlier_arc(rng, n, hx, hy) -> np.ndarray:
    while True:
        c = _random_image_point(rng, hx, hy, 0.0)
        r = rng.uniform(0.1, 2.0)
        t0 = rng.uniform(0, 2 * np.pi)
        span = rng.uniform(0.15, 0.5) / r
        t = t0 + np.linspace(0.0, span, n)
        pts = c + r * np.column_stack([np.cos(t), np.sin(t)])
        if np.all(_inside(pts, hx, hy)):
            return pts


def _outlier_frames(rng, hx, hy) -> tuple:
    while True:
        a = np.array([_random_image_point(rng, hx, hy) for _ in range(3)])
        b = np.array([_random_image_point(rng, hx, hy) for _ in range(3)])
        try:
            RegionCorrespondence(a, b)
            return a, b
        except ValueError:
            continue


def generate_scene(spec: SceneSpec) -> Scene:
    """Sample a camera (where unset) and synthesize features and ground truth."""
    rng = np.random.default_rng(spec.seed)
    fr = spec.frame
    s = fr.scale
    hx, hy = spec.width / 2.0 / s, spec.height / 2.0 / s
    f_px = spec.f if spec.f is not None else rng.uniform(*spec.f_range) * spec.width
    lam_n = fr.lam_to_norm(spec.lam) if spec.lam is not None else rng.uniform(*spec.lam_norm_range)
    R = np.asarray(spec.R, float) if spec.R is not None else sample_rotation(
        rng, spec.yaw_deg, spec.pitch_deg, spec.cone_deg
    )
    fn = f_px / s
    K = np.diag([fn, fn, 1.0])
    k = spec.region_plane
    i, j = (k + 1) % 3, (k + 2) % 3
    vps = [K @ R[:, a] for a in range(3)]
    th = np.radians(rng.uniform(25.0, 65.0))
    diag_dir = np.cos(th) * np.eye(3)[i] + np.sin(th) * np.eye(3)[j]
    families = [(vps[a], a, spec.lines_per_direction[a]) for a in range(3)]
    if spec.diagonal_lines:
        families.append((K @ R @ diag_dir, DIAGONAL_GROUP, spec.diagonal_lines))
        vps.append(K @ R @ diag_dir)
    raw_arcs = []
    for vp, group, count in families:
        raw_arcs += _line_family(vp, lam_n, count, group, rng, spec.points_per_arc, hx, hy, len(raw_arcs))
    raw_regions = [_region(K, R, lam_n, rng, hx, hy, i, j) for _ in range(spec.regions)]

    n_in = len(raw_arcs) + len(raw_regions)
    out_arcs, out_regions = [], []
    if spec.outlier_fraction > 0:
        n_out = int(round(spec.outlier_fraction / (1.0 - spec.outlier_fraction) * n_in))
        labels = sorted({g for _, g, _ in raw_arcs})
        for _ in range(n_out):
            if raw_regions and rng.uniform() < len(raw_regions) / n_in:
                out_regions.append(_outlier_frames(rng, hx, hy))
            else:
                out_arcs.append((_outlier_arc(rng, spec.points_per_arc, hx, hy), int(rng.choice(labels))))

    sig_arc = spec.sigma / s
    sig_reg = (spec.sigma if spec.region_sigma is None else spec.region_sigma) / s
    arcs = []
    for pts, group, _ in raw_arcs + [(p, g, None) for p, g in out_arcs]:
        if sig_arc > 0:
            pts = pts + rng.normal(scale=sig_arc, size=pts.shape)
        arcs.append(ContourArc.from_points(fr.to_pixels(pts), group=group, id=len(arcs)))
    regions = []
    for idx, (a, b) in enumerate(raw_regions + out_regions):
        if sig_reg > 0:
            a = a + rng.normal(scale=sig_reg, size=a.shape)
            b = b + rng.normal(scale=sig_reg, size=b.shape)
        group = i if idx < len(raw_regions) else int(rng.choice([i, j]))
        regions.append(RegionCorrespondence(fr.to_pixels(a), fr.to_pixels(b), group=group, id=idx))

    l_norm = np.linalg.inv(K).T @ R[:, k]
    calib = Calibration(
        lam=fr.lam_to_px(lam_n),
        f=f_px,
        image_size=(spec.width, spec.height),
        R=R,
        vanishing_line=fr.line_to_centered(l_norm / np.linalg.norm(l_norm)),
        vps=[np.array([v[0] * s, v[1] * s, v[2]]) for v in vps],
    )
    fs = FeatureSet((spec.width, spec.height), arcs, regions)
    return Scene(
        fs,
        calib,
        i,
        j,
        k,
        list(range(len(raw_arcs), len(arcs))),
        list(range(len(raw_regions), len(regions))),
    )


def generate(spec: SceneSpec) -> tuple[FeatureSet, Calibration]:
    scene = generate_scene(spec)
    return scene.features, scene.calibration


def add_noise(fs: FeatureSet, sigma: float, rng, region_sigma: Optional[float] = None) -> FeatureSet:
    """I.i.d. Gaussian pixel noise on contour and region points; arcs are re-fit."""
    if sigma < 0 or (region_sigma is not None and region_sigma < 0):
        raise ValueError("noise level must be non-negative")
    rs = sigma if region_sigma is None else region_sigma
    if sigma == 0 and rs == 0:
        return fs
    arcs = [
        ContourArc.from_points(a.points + rng.normal(scale=sigma, size=a.points.shape), a.group, a.id)
        if sigma > 0
        else a
        for a in fs.arcs
    ]
    regions = []
    for r in fs.regions:
        if rs > 0:
            r = RegionCorrespondence(
                r.frame_a + rng.normal(scale=rs, size=(3, 2)),
                r.frame_b + rng.normal(scale=rs, size=(3, 2)),
                r.group,
                r.id,
            )
        regions.append(r)
    return FeatureSet(fs.image_size, arcs, regions)


# --------------------------------------------------------------------------
# minimal samples with known configuration (benchmarks)
# --------------------------------------------------------------------------


def _pick(items, k, rng):
    idx = rng.choice(len(items), size=k, replace=False)
    return [items[t] for t in idx]


def configured_sample(scene: Scene, fs_norm: FeatureSet, solver: str, shape: str, rng):
    """A minimal sample whose vanishing-point slots match the true geometry.

    Coplanar samples use directions in the repeat plane (translation axis,
    in-plane axis, diagonal family, region auxiliary directions); Manhattan
    samples use the three axes.
    """
    from .solvers import MinimalSample

    groups = {}
    for a in fs_norm.arcs:
        if a.group is not None and a.id not in scene.outlier_arcs:
            groups.setdefault(a.group, []).append(a)
    ti, ji, ni = scene.translation_axis, scene.inplane_axis, scene.normal_axis
    region = fs_norm.regions[int(rng.integers(len(fs_norm.regions) - len(scene.outlier_regions)))]
    pcs = point_correspondences(region)
    prim = [p for p in pcs if p.direction_tag == "primary"]
    aux = {t: [p for p in pcs if p.direction_tag == t] for t in ("aux1", "aux2", "aux3")}

    def arcs(g, k):
        return _pick(groups[g], k, rng)

    if solver == "6CA":
        gs = (ti, ji, DIAGONAL_GROUP) if shape == "coplanar" else (ti, ji, ni)
        sets = [arcs(g, 2) for g in gs]
    elif solver == "2PC+4CA":
        g2, g3 = (ji, DIAGONAL_GROUP) if shape == "coplanar" else (ji, ni)
        sets = [_pick(prim, 2, rng), arcs(g2, 2), arcs(g3, 2)]
    elif solver == "4PC+2CA":
        if shape == "coplanar":
            sets = [_pick(prim, 2, rng), aux["aux2"], arcs(ji, 2)]
        else:
            sets = [prim, arcs(ji, 1), arcs(ni, 1)]
    elif solver == "5CA*":
        if shape == "coplanar":
            sets = [arcs(ti, 3), arcs(ji, 2)]
        else:
            sets = [arcs(ti, 3), arcs(ji, 1), arcs(ni, 1)]
    elif solver == "6PC":
        sets = [_pick(prim, 2, rng), aux["aux1"], aux["aux2"]]
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return MinimalSample(solver, sets, shape)
