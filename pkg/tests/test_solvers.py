import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from autocalib.errors import (
    AutocalibError,
    DegenerateGeometry,
    DegenerateSample,
    IdenticalLines,
    ImaginaryFocal,
    NoRealRoot,
    NotOrthogonal,
)
from autocalib.features import ContourArc, PointCorrespondence
from autocalib.geometry import GenCircle, distort_points, undistort
from autocalib.poly import Poly, real_roots
from autocalib.solvers import (
    PATHS,
    MinimalSample,
    VpPoly,
    det_u,
    dispatch,
    focal_from_two_vps,
    line_at,
    line_from_arc,
    line_from_pc,
    manhattan_eliminants,
    rotation_from_vps,
    solve_coincident,
    solve_coplanar,
    solve_manhattan,
    solve_manhattan_step2,
    vp_from_items,
    vp_poly,
)
from autocalib.synth import SceneSpec, configured_sample, generate_scene
from oracles import numeric_manhattan_e, numeric_vp
from residuals import residuals

AIT = dict(f=1126.3, lam=-2.4951e-7, width=3000, height=2250)


def _scene(seed=0, lam_norm=None, **kw):
    kw = {"lines_per_direction": (3, 3, 3), "diagonal_lines": 2, "regions": 1, **kw}
    spec = SceneSpec(seed=seed, **kw)
    if lam_norm is not None:
        spec.lam = spec.frame.lam_to_px(lam_norm)
    return generate_scene(spec)


def _truth(sc):
    fr = sc.features.frame
    return fr.lam_to_norm(sc.calibration.lam), sc.calibration.f / fr.scale


def _arc(mid, normal):
    """Arc stub with a given midpoint and normal; only these feed line_from_arc."""
    return ContourArc(np.zeros((5, 2)), GenCircle(0, 1, 0, 0), np.asarray(mid, float), np.asarray(normal, float))


def _random_arc(rng):
    c = rng.uniform(-2, 2, 2)
    r = rng.uniform(0.5, 5)
    t0 = rng.uniform(0, 2 * np.pi)
    t = np.linspace(t0, t0 + 0.3, 12)
    return ContourArc.from_points(np.column_stack([c[0] + r * np.cos(t), c[1] + r * np.sin(t)]))


# --- line constructions ------------------------------------------------------------


def test_line_from_arc_example():
    s0, s1 = line_from_arc(_arc([0.5, 0.0], [1.0, 0.0]))
    assert s0 == pytest.approx([1, 0, -0.5])
    assert s1 == pytest.approx([0.25, 0, 0])


def test_line_from_arc_center_midpoint_is_lambda_free():
    _, s1 = line_from_arc(_arc([0.0, 0.0], [0.6, 0.8]))
    assert s1 == pytest.approx([0, 0, 0])


def test_line_from_arc_zero_lambda_is_tangent():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = _random_arc(rng)
        s = line_at(line_from_arc(a), 0.0)
        tangent = np.array([-a.normal[1], a.normal[0]])
        assert s @ np.append(a.midpoint, 1) == pytest.approx(0, abs=1e-12)
        assert s[:2] @ tangent == pytest.approx(0, abs=1e-12)


@given(st.integers(0, 10_000), st.floats(-0.9, 0.4))
def test_line_from_arc_matches_derivative_oracle(seed, lam):
    """s(lam) is the tangent of the undistorted curve: join of g(m) and its derivative along the arc."""
    a = _random_arc(np.random.default_rng(seed))
    m, tau = a.midpoint, np.array([-a.normal[1], a.normal[0]])
    g = undistort(m, lam)
    dg = np.array([tau[0], tau[1], 2 * lam * (m @ tau)])
    want = np.cross(g, dg)
    got = line_at(line_from_arc(a), lam)
    assert np.linalg.norm(np.cross(got / np.linalg.norm(got), want / np.linalg.norm(want))) < 1e-12


def test_line_from_pc_example():
    t = line_at(line_from_pc(PointCorrespondence(np.zeros(2), np.array([1.0, 0.0]))), 0.0)
    assert t[0] == pytest.approx(0) and t[2] == pytest.approx(0) and abs(t[1]) > 0


@given(st.integers(0, 10_000), st.floats(-0.9, 0.4))
def test_line_from_pc_incidence(seed, lam):
    rng = np.random.default_rng(seed)
    p, q = rng.uniform(-0.8, 0.8, (2, 2))
    t = line_at(line_from_pc(PointCorrespondence(p, q)), lam)
    t = t / np.linalg.norm(t)
    assert t @ undistort(p, lam) == pytest.approx(0, abs=1e-12)
    assert t @ undistort(q, lam) == pytest.approx(0, abs=1e-12)
    assert np.linalg.norm(np.cross(line_at(line_from_pc(PointCorrespondence(p, q)), 0.0), np.cross(np.append(p, 1), np.append(q, 1)))) < 1e-12


# --- vanishing-point polynomials ------------------------------------------------------


def test_same_arc_twice_is_identical_lines():
    a = _random_arc(np.random.default_rng(1))
    b = ContourArc.from_points(a.points[::-1].copy())  # same circle, same midpoint
    with pytest.raises(IdenticalLines):
        vp_from_items(a, b)


def test_vp_poly_matches_numeric_cross():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        la, lb = line_from_arc(_random_arc(rng)), line_from_pc(PointCorrespondence(*rng.uniform(-1, 1, (2, 2))))
        v = vp_poly(la, lb)
        lam = rng.uniform(-0.9, 0.4)
        got, want = v(lam), numeric_vp(la, lb, lam)
        assert np.linalg.norm(np.cross(got / np.linalg.norm(got), want / np.linalg.norm(want))) < 1e-12


def test_lambda_free_lines_give_constant_vp():
    v = vp_from_items(_arc([0.0, 0.0], [1.0, 0.0]), _arc([0.0, 0.0], [0.6, 0.8]))
    assert v.ux.degree <= 0 and v.uy.degree <= 0 and v.uw.degree <= 0


def test_vp_poly_degree_bounds_enforced():
    with pytest.raises(ValueError):
        VpPoly(Poly([1, 1, 1]), Poly([1]), Poly([1]))


def _random_vps(rng):
    def item():
        if rng.uniform() < 0.5:
            return _random_arc(rng)
        return PointCorrespondence(*rng.uniform(-1, 1, (2, 2)))

    pairs = [(item(), item()) for _ in range(3)]
    return [line_poly_pair(p) for p in pairs]


def line_poly_pair(p):
    from autocalib.solvers import line_poly

    return line_poly(p[0]), line_poly(p[1])


def test_symbolic_det_u_matches_numeric():
    rng = np.random.default_rng(3)
    for _ in range(2000):
        lines = _random_vps(rng)
        vps = [vp_poly(*lp) for lp in lines]
        d = det_u(*vps)
        lam = rng.uniform(-0.95, 0.5)
        U = np.array([v(lam) for v in vps])
        want = np.linalg.det(U)
        assert d(lam) == pytest.approx(want, rel=1e-10, abs=1e-14)


def test_symbolic_eliminants_match_numeric():
    rng = np.random.default_rng(4)
    for _ in range(2000):
        vps = [vp_poly(*lp) for lp in _random_vps(rng)]
        _, _, e1, e2 = manhattan_eliminants(*vps)
        lam = rng.uniform(-0.95, 0.5)
        n1, n2 = numeric_manhattan_e([v(lam) for v in vps])
        assert e1(lam) == pytest.approx(n1, rel=1e-10, abs=1e-14)
        assert e2(lam) == pytest.approx(n2, rel=1e-10, abs=1e-14)
        assert e1.degree <= 6 and e2.degree <= 6


# --- coplanar solver ------------------------------------------------------------------------


def _coplanar_vps(sc, rng, solver="6CA"):
    fsn = sc.features.normalized()
    smp = configured_sample(sc, fsn, solver, "coplanar", rng)
    return [vp_from_items(*s) for s in smp.vp_sets]


def test_coplanar_recovers_lambda_and_line():
    sc = _scene(5, lam_norm=-0.2)
    out = solve_coplanar(*_coplanar_vps(sc, np.random.default_rng(0)))
    best = min(out, key=lambda o: abs(o.lam + 0.2))
    assert best.lam == pytest.approx(-0.2, abs=1e-8)
    l_true = sc.features.frame.line_to_norm(sc.calibration.vanishing_line)
    cosang = abs(best.vanishing_line @ l_true) / np.linalg.norm(best.vanishing_line) / np.linalg.norm(l_true)
    assert np.arccos(min(1.0, cosang)) < 1e-6


def test_coplanar_zero_lambda():
    sc = _scene(6, lam_norm=0.0)
    out = solve_coplanar(*_coplanar_vps(sc, np.random.default_rng(0)))
    assert min(abs(o.lam) for o in out) < 1e-9


def test_coplanar_duplicated_vp_is_degenerate():
    v = _coplanar_vps(_scene(7), np.random.default_rng(0))
    with pytest.raises(DegenerateSample):
        solve_coplanar(v[0], v[1], v[0])


# --- Manhattan solver -------------------------------------------------------------------------


def _manhattan_vps(sc, rng):
    fsn = sc.features.normalized()
    smp = configured_sample(sc, fsn, "6CA", "manhattan", rng)
    return [vp_from_items(*s) for s in smp.vp_sets]


@pytest.mark.parametrize("seed", range(5))
def test_manhattan_recovers_ait_camera(seed):
    sc = _scene(seed, **AIT)
    lam, f = _truth(sc)
    out = solve_manhattan(*_manhattan_vps(sc, np.random.default_rng(seed)))
    best = min(out, key=lambda o: abs(o.lam - lam))
    assert abs(best.lam - lam) / abs(lam) < 1e-6
    assert abs(best.f - f) / f < 1e-6
    fr = sc.features.frame
    assert best.f * fr.scale == pytest.approx(1126.3, rel=1e-6)


def test_manhattan_zero_lambda_shared_root():
    sc = _scene(8, lam_norm=0.0)
    vps = _manhattan_vps(sc, np.random.default_rng(1))
    _, _, e1, e2 = manhattan_eliminants(*vps)
    assert abs(e1(0.0)) <= 1e-12 * e1.norm() and abs(e2(0.0)) <= 1e-12 * e2.norm()
    out = solve_manhattan(*vps)
    o = min(out, key=lambda o: abs(o.lam))
    assert abs(o.lam) < 1e-9
    u = [v(0.0) for v in vps]
    for i, j in ((0, 1), (0, 2), (1, 2)):
        assert focal_from_two_vps(u[i], u[j]) == pytest.approx(o.f, rel=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_manhattan_on_coplanar_vps_fails(seed):
    sc = _scene(seed)
    with pytest.raises((ImaginaryFocal, NoRealRoot)):
        solve_manhattan(*_coplanar_vps(sc, np.random.default_rng(seed)))


# --- coincidence ----------------------------------------------------------------------------------


def _concurrent_arcs(lam, vp, rng, n=3, concurrent=True):
    """Arcs (normalized) imaging undistorted lines through vp, distorted with lam."""
    arcs = []
    for _ in range(n):
        while True:
            x = rng.uniform(-0.5, 0.5, 2)
            target = vp if concurrent else np.append(rng.uniform(-3, 3, 2), 1.0)
            l = np.cross(np.append(x, 1.0), target)
            d = np.array([-l[1], l[0]]) / np.hypot(l[0], l[1])
            t = np.linspace(-0.15, 0.15, 20)
            und = np.column_stack([x + np.outer(t, d), np.ones(len(t))])
            pts = distort_points(und, lam)
            if np.all(np.isfinite(pts)):
                break
        arcs.append(ContourArc.from_points(pts))
    return arcs


def _coincidence_roots(arcs):
    from autocalib.solvers import line_poly

    L = [line_poly(a) for a in arcs]
    return solve_coincident(vp_poly(L[0], L[1]), vp_poly(L[0], L[2]))


def test_coincident_recovers_lambda():
    rng = np.random.default_rng(9)
    for _ in range(20):
        vp = np.array([*rng.uniform(-2, 2, 2), 1.0])
        roots = _coincidence_roots(_concurrent_arcs(-0.3, vp, rng))
        # the determinant quadratic may carry a second genuine root
        assert min(abs(r + 0.3) for r in roots) < 1e-8


def test_coincident_zero_lambda():
    rng = np.random.default_rng(10)
    roots = _coincidence_roots(_concurrent_arcs(0.0, np.array([1.5, 0.7, 1.0]), rng))
    assert min(abs(r) for r in roots) < 1e-9


def test_non_concurrent_lines_roots_match_numeric_oracle():
    """Roots appear exactly where the numeric line determinant changes sign in the admissible range.

    Concurrency of three lambda-affine lines is one scalar equation in lambda,
    so generic non-concurrent lines can still meet at some other lambda.
    """
    from autocalib.solvers import LAM_RANGE, line_poly

    rng = np.random.default_rng(11)
    grid = np.linspace(LAM_RANGE[0] + 1e-6, LAM_RANGE[1] - 1e-6, 4001)
    empty = 0
    for _ in range(50):
        arcs = _concurrent_arcs(-0.3, None, rng, concurrent=False)
        L = [line_poly(a) for a in arcs]
        det = np.array([np.linalg.det(np.array([line_at(lp, t) for lp in L])) for t in grid])
        crossings = grid[:-1][np.sign(det[:-1]) != np.sign(det[1:])]
        roots = _coincidence_roots(arcs)
        assert len(roots) == len(crossings)
        for r, c in zip(sorted(roots), crossings):
            assert abs(r - c) <= grid[1] - grid[0]
        empty += not roots
    assert empty >= 40  # most generic triples have no admissible meeting point


# --- second-stage Manhattan ----------------------------------------------------------------------


def _five_arc(sc, rng):
    fsn = sc.features.normalized()
    return configured_sample(sc, fsn, "5CA*", "manhattan", rng)


@pytest.mark.parametrize("seed", range(5))
def test_step2_recovers_focal_and_vps(seed):
    sc = _scene(seed)
    lam, f = _truth(sc)
    smp = _five_arc(sc, np.random.default_rng(seed))
    fs = sc.features.frame
    true_vps = [np.diag([f, f, 1.0]) @ sc.calibration.R[:, a] for a in range(3)]
    ti, ji, ni = sc.translation_axis, sc.inplane_axis, sc.normal_axis
    sols = solve_manhattan_step2(true_vps[ti], lam, smp.vp_sets[1][0], smp.vp_sets[2][0])
    f_hat, u2, u3 = min(sols, key=lambda s: abs(s[0] - f))
    assert abs(f_hat - f) / f < 1e-6
    for u, v in ((u2, true_vps[ji]), (u3, true_vps[ni])):
        c = abs(u @ v) / np.linalg.norm(u) / np.linalg.norm(v)
        assert np.arccos(min(1.0, c)) < 1e-6


def test_step2_zero_lambda_consistent_with_two_vp_focal():
    sc = _scene(3, lam_norm=0.0)
    lam, f = _truth(sc)
    smp = _five_arc(sc, np.random.default_rng(0))
    u1 = np.diag([f, f, 1.0]) @ sc.calibration.R[:, sc.translation_axis]
    for f_hat, u2, u3 in solve_manhattan_step2(u1, 0.0, smp.vp_sets[1][0], smp.vp_sets[2][0]):
        assert focal_from_two_vps(u2, u3) == pytest.approx(f_hat, rel=1e-9)
        assert focal_from_two_vps(u1, u2) == pytest.approx(f_hat, rel=1e-9)


def test_step2_same_arc_twice():
    sc = _scene(4)
    lam, f = _truth(sc)
    smp = _five_arc(sc, np.random.default_rng(0))
    u1 = np.diag([f, f, 1.0]) @ sc.calibration.R[:, sc.translation_axis]
    a = smp.vp_sets[1][0]
    try:
        sols = solve_manhattan_step2(u1, lam, a, a)
    except (DegenerateGeometry, ImaginaryFocal):
        return
    # u2 and u3 lie on one line; any surviving w must make them the same point
    for _, u2, u3 in sols:
        assert np.linalg.norm(np.cross(u2, u3)) < 1e-9 * np.linalg.norm(u2) * np.linalg.norm(u3)


# --- focal length and rotation ------------------------------------------------------------------------


def test_focal_examples():
    assert focal_from_two_vps([1, 0, 1], [-1, 0, 1]) == pytest.approx(1.0)
    with pytest.raises(ImaginaryFocal):
        focal_from_two_vps([1, 0, 1], [1, 0, 1])


def test_focal_from_synthetic_vps():
    rng = np.random.default_rng(12)
    K = np.diag([1126.3, 1126.3, 1.0])
    for _ in range(50):
        R = Rotation.random(random_state=rng).as_matrix()
        if min(abs(R[2, 0]), abs(R[2, 1])) < 1e-3:
            continue
        assert focal_from_two_vps(K @ R[:, 0], K @ R[:, 1]) == pytest.approx(1126.3, rel=1e-9)


def test_rotation_identity():
    assert rotation_from_vps([1, 0, 0], [0, 1, 0], 1.0) == pytest.approx(np.eye(3), abs=1e-12)


def test_rotation_round_trip_up_to_signs():
    rng = np.random.default_rng(13)
    f = 1.7
    K = np.diag([f, f, 1.0])
    for _ in range(100):
        R = Rotation.random(random_state=rng).as_matrix()
        s = rng.choice([-1.0, 1.0], 2)
        Rh = rotation_from_vps(s[0] * K @ R[:, 0], s[1] * K @ R[:, 1], f)
        best = min(
            np.linalg.norm(Rotation.from_matrix(Rh.T @ (R * np.array([a, b, a * b]))).as_rotvec())
            for a in (-1, 1)
            for b in (-1, 1)
        )
        assert best < 1e-8


def test_rotation_rejects_equal_vps():
    with pytest.raises(NotOrthogonal):
        rotation_from_vps([1, 0, 1], [1, 0, 1], 1.0)


# --- dispatch -----------------------------------------------------------------------------------------------


@pytest.mark.parametrize("path", PATHS, ids=lambda p: f"{p[0]}-{p[1]}")
def test_dispatch_recovers_truth_every_path(path):
    for seed in range(5):
        sc = _scene(100 + seed)
        lam, f = _truth(sc)
        smp = configured_sample(sc, sc.features.normalized(), path[0], path[1], np.random.default_rng(seed))
        out = [o for o in dispatch(smp) if o.f is not None]
        err = min(max(abs(o.lam - lam) / abs(lam), abs(o.f - f) / f) for o in out)
        assert err < 1e-6


def test_dispatch_single_group_is_degenerate():
    sc = _scene(14, lines_per_direction=(6, 3, 3))
    fsn = sc.features.normalized()
    g = [a for a in fsn.arcs if a.group == 0][:6]
    smp = MinimalSample("6CA", [g[0:2], g[2:4], g[4:6]])
    with pytest.raises(DegenerateSample):
        dispatch(smp)


def test_dispatch_zero_lambda_candidate():
    sc = _scene(15, lam_norm=0.0)
    smp = configured_sample(sc, sc.features.normalized(), "2PC+4CA", "coplanar", np.random.default_rng(0))
    assert min(abs(o.lam) for o in dispatch(smp)) < 1e-9


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1), st.sampled_from(PATHS))
def test_solutions_satisfy_defining_constraints(seed, path):
    from autocalib.ransac import sample_minimal

    sc = _scene(seed % 1000)
    fsn = sc.features.normalized()
    rng = np.random.default_rng(seed)
    try:
        smp = configured_sample(sc, fsn, *path, rng) if seed % 2 else sample_minimal(fsn, path[0], rng)
        out = dispatch(smp)
    except AutocalibError:
        return
    for o in out:
        for name, v in residuals(smp, o).items():
            assert v <= 1e-9, name


# --- polynomial examples built from synthetic samples ----------------------------------------------


def test_eliminant_real_roots_contain_truth():
    sc = _scene(21, **AIT)
    lam, _ = _truth(sc)
    _, _, e1, e2 = manhattan_eliminants(*_manhattan_vps(sc, np.random.default_rng(0)))
    for e in (e1, e2):
        assert e.degree == 6
        assert min(abs(r - lam) for r in real_roots(e)) < 1e-8


def test_coincidence_triple_common_roots():
    from autocalib.poly import common_real_roots
    from autocalib.solvers import coincidence_polys, line_poly

    rng = np.random.default_rng(22)
    arcs = _concurrent_arcs(-0.3, np.array([1.2, -0.4, 1.0]), rng)
    L = [line_poly(a) for a in arcs]
    c1, c2, c3 = coincidence_polys(vp_poly(L[0], L[1]), vp_poly(L[0], L[2]))
    assert c1.degree == 3 and c2.degree == 3 and c3.degree <= 2
    roots = common_real_roots([c1, c2, c3], 1e-8)
    assert min(abs(r + 0.3) for r in roots) < 1e-8
