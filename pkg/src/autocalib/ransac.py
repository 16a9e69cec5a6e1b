"""Hybrid RANSAC over the minimal solvers, with MSAC scoring and local optimization."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .consistency import (
    CONTOUR_THRESHOLD,
    POINT_THRESHOLD,
    FeatureArrays,
    candidate_lines,
    candidate_vps,
    reject_minimal_sample,
)
from .errors import AutocalibError, InsufficientFeatures, NoModel
from .features import AUX_PAIRS, FeatureSet, point_correspondences
from .geometry import Calibration, ImageFrame, circle_distance, distort_lines, undistort
from .kvconfig import from_kv, load_kv, to_kv
from .solvers import CONFIGURATIONS, SOLVERS, MinimalSample, SolverOutput, admissible, dispatch

# modes drawn per sample when a solver's two configurations differ in shape
_SHAPES = {
    "4PC+2CA": ("coplanar", "manhattan"),
    "5CA*": ("coplanar", "manhattan"),
    "6PC": ("coplanar",),
    "2PC+4CA": (None,),
    "6CA": (None,),
}


@dataclass
class RansacConfig:
    iterations: int = 500
    contour_threshold: float = CONTOUR_THRESHOLD
    point_threshold: float = POINT_THRESHOLD
    solvers: tuple = SOLVERS
    weights: tuple = ()
    seed: int = 0
    local_opt: bool = True
    ortho_tol: float = 0.05
    early_exit_ratio: float = 0.9
    early_exit_patience: int = 50
    lo_rounds: int = 10

    def __post_init__(self):
        self.solvers = tuple(self.solvers)
        unknown = set(self.solvers) - set(SOLVERS)
        if unknown:
            raise ValueError(f"unknown solvers {sorted(unknown)}")
        if not self.solvers:
            raise ValueError("empty solver ensemble")
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if not (self.contour_threshold > 0 and self.point_threshold > 0):
            raise ValueError("thresholds must be positive")
        w = np.asarray(self.weights if self.weights else [1.0] * len(self.solvers), float)
        if len(w) != len(self.solvers) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative, one per solver")
        self.weights = tuple((w / w.sum()).tolist())

    @classmethod
    def from_kv(cls, text: str, **overrides) -> "RansacConfig":
        return from_kv(cls, text, **overrides)

    @classmethod
    def load(cls, path, **overrides) -> "RansacConfig":
        return load_kv(cls, path, **overrides)

    def to_kv(self) -> str:
        return to_kv(self)

    def replace(self, **kw) -> "RansacConfig":
        if "solvers" in kw and "weights" not in kw:
            kw["weights"] = ()
        return dataclasses.replace(self, **kw)


@dataclass
class Hypothesis:
    """A candidate calibration (normalized units) and its consensus set."""

    output: SolverOutput
    arc_inliers: np.ndarray
    region_inliers: np.ndarray
    cost: float
    solver: str = ""
    iteration: int = -1

    @property
    def n_inliers(self) -> int:
        return int(len(self.arc_inliers) + len(self.region_inliers))

    @property
    def score(self) -> tuple[int, float]:
        """Sort key: more inliers first, then lower truncated cost."""
        return (self.n_inliers, -self.cost)

    def to_calibration(self, frame: ImageFrame) -> Calibration:
        return output_to_calibration(self.output, frame)


def output_to_calibration(out: SolverOutput, frame: ImageFrame) -> Calibration:
    s = frame.scale
    return Calibration(
        lam=frame.lam_to_px(out.lam),
        f=None if out.f is None else out.f * s,
        image_size=(frame.width, frame.height),
        R=out.R,
        vanishing_line=None if out.vanishing_line is None else frame.line_to_centered(out.vanishing_line),
        vps=[np.array([v[0] * s, v[1] * s, v[2]]) for v in out.vps],
    )


def calibration_to_output(cal: Calibration) -> SolverOutput:
    fr = cal.frame
    s = fr.scale
    return SolverOutput(
        lam=cal.lam_norm,
        mode="manhattan" if cal.R is not None else "coplanar",
        vps=[np.array([v[0] / s, v[1] / s, v[2]]) for v in cal.vps],
        vanishing_line=None if cal.vanishing_line is None else fr.line_to_norm(cal.vanishing_line),
        f=None if cal.f is None else cal.f / s,
        R=cal.R,
    )


# --------------------------------------------------------------------------
# scoring
# --------------------------------------------------------------------------


def evaluate(out: SolverOutput, arrays: FeatureArrays, config: RansacConfig, solver="", iteration=-1) -> Hypothesis:
    ja, jr = arrays.residuals(out)
    ta2, tr2 = config.contour_threshold**2, config.point_threshold**2
    cost = float(np.minimum(ja / ta2, 1.0).sum() + np.minimum(jr / tr2, 1.0).sum())
    return Hypothesis(out, np.flatnonzero(ja <= ta2), np.flatnonzero(jr <= tr2), cost, solver, iteration)


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------


def _arc_pools(fs: FeatureSet) -> dict:
    pools: dict = {}
    for a in fs.arcs:
        pools.setdefault(a.group, []).append(a)
    return pools


def _valid_regions(fs: FeatureSet) -> list:
    return [r for r in fs.regions if sum(pc.direction_tag == "primary" for pc in point_correspondences(r)) == 3]


def sample_minimal(fs_norm: FeatureSet, solver: str, rng, shape: Optional[str] = "auto") -> MinimalSample:
    """Draw features matching one of the solver's input configurations.

    Correspondence slots come from a single region: the first uses primary
    (translation) correspondences and later ones use distinct auxiliary
    directions. Arc slots use distinct direction groups, excluding the
    region's translation group. Arcs without group labels form one pool
    sampled without replacement.
    """
    if shape == "auto":
        opts = _SHAPES[solver]
        shape = opts[int(rng.integers(len(opts)))] if len(opts) > 1 else opts[0]
    config = CONFIGURATIONS[(solver, shape or "coplanar")]
    sets: list = [None] * len(config)
    pc_slots = [k for k, c in enumerate(config) if c[0] == "p"]
    arc_slots = [k for k, c in enumerate(config) if c[0] == "c"]
    region = None
    if pc_slots:
        regions = _valid_regions(fs_norm)
        if not regions:
            raise InsufficientFeatures("no region correspondence")
        region = regions[int(rng.integers(len(regions)))]
        pcs = point_correspondences(region)
        prim = [p for p in pcs if p.direction_tag == "primary"]
        aux_tags = [f"aux{k}" for k in rng.permutation(len(AUX_PAIRS)) + 1]
        for n, k in enumerate(pc_slots):
            need = len(config[k])
            if n == 0:
                idx = np.sort(rng.choice(3, size=need, replace=False))
                sets[k] = [prim[i] for i in idx]
            else:
                tag = aux_tags[n - 1]
                sets[k] = [p for p in pcs if p.direction_tag == tag]
    if arc_slots:
        pools = _arc_pools(fs_norm)
        grouped = {g: v for g, v in pools.items() if g is not None}
        if grouped:
            exclude = region.group if region is not None else object()
            need = [len(config[k]) for k in arc_slots]
            order = sorted(range(len(need)), key=lambda t: -need[t])
            used: set = set()
            for t in order:
                cands = sorted(g for g, v in grouped.items() if g not in used and g != exclude and len(v) >= need[t])
                if not cands:
                    raise InsufficientFeatures(f"no arc group with {need[t]} arcs left")
                g = cands[int(rng.integers(len(cands)))]
                used.add(g)
                pool = grouped[g]
                idx = rng.choice(len(pool), size=need[t], replace=False)
                sets[arc_slots[t]] = [pool[i] for i in np.sort(idx)]
        else:
            pool = pools.get(None, [])
            total = sum(len(config[k]) for k in arc_slots)
            if len(pool) < total:
                raise InsufficientFeatures("not enough arcs")
            idx = rng.choice(len(pool), size=total, replace=False)
            pos = 0
            for k in arc_slots:
                sets[k] = [pool[i] for i in idx[pos : pos + len(config[k])]]
                pos += len(config[k])
    return MinimalSample(
        solver,
        sets,
        shape,
        arc_ids=[a.id for k in arc_slots for a in sets[k]],
        region_ids=[] if region is None else [region.id],
    )


def feasible_solvers(fs_norm: FeatureSet, solvers) -> list[str]:
    """Solvers whose configuration the feature set can supply at all."""
    pools = _arc_pools(fs_norm)
    grouped = {g: v for g, v in pools.items() if g is not None}
    has_region = bool(_valid_regions(fs_norm))
    n_free = len(pools.get(None, []))
    out = []
    for s in solvers:
        ok = False
        for shape in _SHAPES[s]:
            cfg = CONFIGURATIONS[(s, shape or "coplanar")]
            arc_need = sorted((len(c) for c in cfg if c[0] == "c"), reverse=True)
            if any(c[0] == "p" for c in cfg) and not has_region:
                continue
            if grouped:
                sizes = sorted((len(v) for v in grouped.values()), reverse=True)
                if len(arc_need) <= len(sizes) and all(n <= m for n, m in zip(arc_need, sizes)):
                    ok = True
            elif sum(arc_need) <= n_free:
                ok = True
        if ok:
            out.append(s)
    return out


# --------------------------------------------------------------------------
# main loop
# --------------------------------------------------------------------------


@dataclass
class RansacReport:
    iterations_run: int = 0
    early_exit: bool = False
    invocations: dict = field(default_factory=dict)
    successes: dict = field(default_factory=dict)
    candidates: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    lo_before: Optional[tuple] = None
    lo_after: Optional[tuple] = None

    def to_dict(self) -> dict:
        return {
            "iterations_run": self.iterations_run,
            "early_exit": self.early_exit,
            "per_solver": {
                s: {
                    "invocations": self.invocations.get(s, 0),
                    "successes": self.successes.get(s, 0),
                    "candidates": self.candidates.get(s, 0),
                }
                for s in sorted(self.invocations)
            },
            "trace": [list(t) for t in self.trace],
            "local_opt": None
            if self.lo_before is None
            else {"before": list(self.lo_before), "after": list(self.lo_after)},
        }


def run(fs: FeatureSet, config: RansacConfig = RansacConfig()) -> tuple[Hypothesis, RansacReport]:
    """Hybrid RANSAC; returns the best (locally optimized) hypothesis and a report.

    Iteration i draws from its own generator seeded with (seed, i), so the
    result does not depend on how iterations are scheduled.
    """
    fsn = fs.normalized()
    arrays = FeatureArrays.from_features(fsn, fs.frame.scale)
    regions = {r.id: r for r in fsn.regions}
    report = RansacReport()
    total = len(fs)
    if total == 0:
        raise NoModel("empty feature set")
    weights = dict(zip(config.solvers, config.weights))
    enabled = [s for s in feasible_solvers(fsn, config.solvers) if weights[s] > 0]
    if not enabled:
        raise NoModel("no enabled solver can be fed by these features")
    w = np.array([weights[s] for s in enabled])
    w = w / w.sum()
    thresholds = (config.contour_threshold, config.point_threshold)
    best: Optional[Hypothesis] = None
    streak = 0
    for it in range(config.iterations):
        rng = np.random.default_rng([config.seed, it])
        solver = enabled[int(rng.choice(len(enabled), p=w))]
        report.invocations[solver] = report.invocations.get(solver, 0) + 1
        report.iterations_run = it + 1
        try:
            sample = sample_minimal(fsn, solver, rng)
            outs = dispatch(sample, ortho_tol=config.ortho_tol)
        except AutocalibError:
            outs = []
        survived = 0
        for out in outs:
            if reject_minimal_sample(sample, out, thresholds, arrays.scale, regions):
                continue
            survived += 1
            h = evaluate(out, arrays, config, solver, it)
            if best is None or h.score > best.score:
                best = h
                report.trace.append((it, best.n_inliers, round(best.cost, 9)))
        if survived:
            report.successes[solver] = report.successes.get(solver, 0) + 1
            report.candidates[solver] = report.candidates.get(solver, 0) + survived
        if best is not None and best.n_inliers > config.early_exit_ratio * total:
            streak += 1
            if streak >= config.early_exit_patience:
                report.early_exit = True
                break
        else:
            streak = 0
    if best is None:
        raise NoModel("no candidate survived minimal-sample rejection")
    if config.local_opt:
        report.lo_before = (best.n_inliers, round(best.cost, 9))
        best = local_optimize(best, fs, config, arrays)
        report.lo_after = (best.n_inliers, round(best.cost, 9))
    return best, report


# --------------------------------------------------------------------------
# local optimization
# --------------------------------------------------------------------------


def _arc_point_dist(arrays: FeatureArrays, idx, lam, U) -> np.ndarray:
    """Per-point distances (normalized) of arcs idx to circles through U[t]."""
    xbar = undistort(arrays.arc_mid[idx], lam)
    coef = distort_lines(np.cross(xbar, U), lam)
    d = circle_distance(coef[:, None, :], arrays.arc_pts[idx])
    return d[arrays.arc_w[idx] > 0]


def _region_point_dist(arrays: FeatureArrays, idx, lam, L) -> np.ndarray:
    """Per-point distances of regions idx for vanishing points constrained to lines L[t]."""
    gp = undistort(arrays.reg_p[idx], lam)
    gq = undistort(arrays.reg_q[idx], lam)
    t = np.cross(gp, gq)
    t = t / np.linalg.norm(t[..., :2], axis=-1, keepdims=True)
    L = L / np.linalg.norm(L[:, :2], axis=1, keepdims=True)
    a, b, c = L[:, 0], L[:, 1], L[:, 2]
    p0 = np.stack([-a * c, -b * c, np.ones_like(a)], axis=1)
    dd = np.stack([-b, a, np.zeros_like(a)], axis=1)
    ap = np.einsum("mjc,mc->mj", t, p0)
    bd = np.einsum("mjc,mc->mj", t, dd)
    tt = -np.sum(ap * bd, axis=1) / np.sum(bd * bd, axis=1)
    u = p0 + tt[:, None] * dd
    mid = 0.5 * (gp[..., :2] / gp[..., 2:] + gq[..., :2] / gq[..., 2:])
    midh = np.concatenate([mid, np.ones(mid.shape[:-1] + (1,))], axis=-1)
    coef = distort_lines(np.cross(midh, u[:, None, :]), lam)
    return np.concatenate(
        [circle_distance(coef, arrays.reg_p[idx]).ravel(), circle_distance(coef, arrays.reg_q[idx]).ravel()]
    )


def _assign(arrays: FeatureArrays, h: Hypothesis):
    out = h.output
    vps, lines = candidate_vps(out), candidate_lines(out)
    ai = h.arc_inliers
    ri = h.region_inliers
    a_idx = np.argmin(arrays.arc_J(out.lam, vps)[:, ai], axis=0) if len(ai) and len(vps) else np.zeros(0, int)
    r_idx = np.argmin(arrays.region_J(out.lam, lines)[:, ri], axis=0) if len(ri) and len(lines) else np.zeros(0, int)
    return a_idx, r_idx


def _sphere(u) -> tuple[float, float]:
    u = np.asarray(u, float) / np.linalg.norm(u)
    return float(np.arctan2(u[1], u[0])), float(np.arcsin(np.clip(u[2], -1.0, 1.0)))


def _from_sphere(az, el) -> np.ndarray:
    return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def _lo_frame(h: Hypothesis, arrays: FeatureArrays, config: RansacConfig) -> Optional[SolverOutput]:
    """Refine (lam, f, R) of a hypothesis with a Manhattan frame.

    Arcs assigned to vanishing points outside the frame keep those points
    as free nuisance parameters; regions are scored against the frame's
    plane lines.
    """
    out = h.output
    ai, ri = h.arc_inliers, h.region_inliers
    extra = [np.asarray(v, float) for v in out.vps]
    # arcs explained by the frame stay tied to it; only the rest use the solver's own points
    J = arrays.arc_J(out.lam, candidate_vps(out))[:, ai]
    a_idx = np.argmin(J, axis=0)
    on_frame = J[:3].min(axis=0) <= config.contour_threshold**2
    a_idx[on_frame] = np.argmin(J[:3, on_frame], axis=0)
    used = sorted({int(k) - 3 for k in a_idx if k >= 3})
    slot = {e: 3 + n for n, e in enumerate(used)}
    a_idx = np.array([k if k < 3 else slot[int(k) - 3] for k in a_idx], int)
    R0 = out.R
    sa = arrays.scale / config.contour_threshold
    sr = arrays.scale / config.point_threshold

    def build(x):
        lam, logf, rv = x[0], x[1], x[2:5]
        f = np.exp(logf)
        R = Rotation.from_rotvec(rv).as_matrix() @ R0
        K = np.diag([f, f, 1.0])
        Kit = np.diag([1.0 / f, 1.0 / f, 1.0])
        free = [_from_sphere(x[5 + 2 * n], x[6 + 2 * n]) for n in range(len(used))]
        vps = np.array([K @ R[:, i] for i in range(3)] + free).reshape(-1, 3)
        lines = np.array([Kit @ R[:, k] for k in range(3)])
        return lam, f, R, vps, lines

    def fun(x):
        lam, f, R, vps, lines = build(x)
        res = []
        if len(ai):
            res.append(sa * _arc_point_dist(arrays, ai, lam, vps[a_idx]))
        if len(ri):
            jr = arrays.region_J(lam, lines)[:, ri]
            r_idx = np.argmin(np.where(np.isfinite(jr), jr, np.inf), axis=0)
            res.append(sr * _region_point_dist(arrays, ri, lam, lines[r_idx]))
        r = np.concatenate(res)
        return np.where(np.isfinite(r), r, 1e3)

    x0 = np.array([out.lam, np.log(out.f), 0.0, 0.0, 0.0] + [a for e in used for a in _sphere(extra[e])])
    if len(fun(x0)) < len(x0) + 1:
        return None
    sol = least_squares(fun, x0, method="lm", max_nfev=200 * len(x0), xtol=1e-12, ftol=1e-12)
    lam, f, R, vps, lines = build(sol.x)
    if not admissible(lam):
        return None
    for n, e in enumerate(used):
        extra[e] = vps[3 + n]
    line = out.vanishing_line
    if line is not None:
        l0 = np.asarray(line, float) / np.linalg.norm(line)
        line = max(lines, key=lambda l: abs(l @ l0) / np.linalg.norm(l))
        line = line / np.linalg.norm(line)
    return SolverOutput(lam, out.mode, extra, line, f, R, out.ortho_pair, out.solver)


def _lo_line(h: Hypothesis, arrays: FeatureArrays, config: RansacConfig) -> Optional[SolverOutput]:
    """Refine (lam, l, vanishing points on l) of a coplanar hypothesis."""
    out = h.output
    a_idx, r_idx = _assign(arrays, h)
    ai, ri = h.arc_inliers, h.region_inliers
    l0 = np.asarray(out.vanishing_line, float)
    n = np.hypot(l0[0], l0[1])
    if n <= 1e-12:
        return None
    l0 = l0 / n
    th0 = np.arctan2(l0[1], l0[0])
    vps = [np.asarray(v, float) for v in out.vps]
    d0 = np.array([-l0[1], l0[0]])
    p0 = -l0[2] * l0[:2]
    ts = []
    for v in vps:
        if abs(v[2]) <= 1e-12 * np.linalg.norm(v):
            return None
        ts.append(float((v[:2] / v[2] - p0) @ d0))
    sa = arrays.scale / config.contour_threshold
    sr = arrays.scale / config.point_threshold

    def build(x):
        lam, th, c = x[0], x[1], x[2]
        a, b = np.cos(th), np.sin(th)
        p = np.array([-a * c, -b * c, 1.0])
        d = np.array([-b, a, 0.0])
        U = np.array([p + t * d for t in x[3:]])
        return lam, np.array([a, b, c]), U

    def fun(x):
        lam, l, U = build(x)
        res = []
        if len(ai):
            res.append(sa * _arc_point_dist(arrays, ai, lam, U[a_idx]))
        if len(ri):
            res.append(sr * _region_point_dist(arrays, ri, lam, np.repeat(l[None], len(ri), axis=0)))
        r = np.concatenate(res)
        return np.where(np.isfinite(r), r, 1e3)

    x0 = np.array([out.lam, th0, l0[2]] + ts)
    if len(fun(x0)) < len(x0) + 1:
        return None
    sol = least_squares(fun, x0, method="lm", max_nfev=200 * len(x0), xtol=1e-12, ftol=1e-12)
    lam, l, U = build(sol.x)
    if not admissible(lam):
        return None
    return SolverOutput(lam, out.mode, list(U), l, None, None, None, out.solver)


def local_optimize(
    best: Hypothesis, fs: FeatureSet, config: RansacConfig, arrays: Optional[FeatureArrays] = None
) -> Hypothesis:
    """Inlier-set refinement with re-collection; never returns a worse score.

    Hypotheses with a Manhattan frame refine (lam, f, rotation); coplanar
    ones refine (lam, vanishing line, vanishing points on it). Residuals are
    point-to-circle distances scaled by the inlier thresholds.
    """
    if arrays is None:
        arrays = FeatureArrays.from_features(fs.normalized(), fs.frame.scale)
    if best.n_inliers < 2:
        return best
    cur = best
    for _ in range(config.lo_rounds):
        step = _lo_frame if cur.output.has_frame else _lo_line
        if not cur.output.has_frame and cur.output.vanishing_line is None:
            break
        try:
            out = step(cur, arrays, config)
        except (AutocalibError, np.linalg.LinAlgError, ValueError):
            out = None
        if out is None:
            break
        h = evaluate(out, arrays, config, cur.solver, cur.iteration)
        if not h.score > cur.score:
            break
        cur = h
    return cur
