import numpy as np
import pytest

from autocalib.consistency import FeatureArrays
from autocalib.errors import NoModel, ParseError
from autocalib.evaluation import WarpGrid, relative_errors, warp_error
from autocalib.features import FeatureSet
from autocalib.ransac import (
    Hypothesis,
    RansacConfig,
    calibration_to_output,
    evaluate,
    feasible_solvers,
    local_optimize,
    run,
    sample_minimal,
)
from autocalib.solvers import SOLVERS
from autocalib.synth import SceneSpec, generate_scene


def _spec(seed, **kw):
    return SceneSpec(seed=seed, **kw)


# --- sampling -----------------------------------------------------------------------


def test_6ca_draws_pairs_from_distinct_groups(scene):
    fsn = scene.features.normalized()
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = sample_minimal(fsn, "6CA", rng)
        assert [len(v) for v in s.vp_sets] == [2, 2, 2]
        groups = [{a.group for a in v} for v in s.vp_sets]
        assert all(len(g) == 1 for g in groups)
        assert len(set.union(*groups)) == 3
        ids = [a.id for v in s.vp_sets for a in v]
        assert len(ids) == len(set(ids))


def test_5ca_coplanar_draws_triple_and_pair(scene):
    fsn = scene.features.normalized()
    s = sample_minimal(fsn, "5CA*", np.random.default_rng(1), shape="coplanar")
    assert [len(v) for v in s.vp_sets] == [3, 2]
    assert len({a.group for a in s.vp_sets[0]}) == 1
    assert {a.group for a in s.vp_sets[0]}.isdisjoint({a.group for a in s.vp_sets[1]})


def test_ungrouped_sampling_has_no_duplicates(scene):
    fsn = scene.features.normalized()
    for a in fsn.arcs:
        a.group = None
    rng = np.random.default_rng(2)
    for _ in range(50):
        s = sample_minimal(fsn, "6CA", rng)
        ids = [a.id for v in s.vp_sets for a in v]
        assert len(ids) == 6 == len(set(ids))


def test_pc_slots_come_from_one_region(scene):
    fsn = scene.features.normalized()
    rng = np.random.default_rng(3)
    for _ in range(30):
        s = sample_minimal(fsn, "6PC", rng)
        tags = [{pc.direction_tag for pc in v} for v in s.vp_sets]
        assert tags[0] == {"primary"} and all(len(t) == 1 for t in tags)
        assert len({pc.region_id for v in s.vp_sets for pc in v}) == 1


def test_feasible_solvers_without_regions(scene):
    fsn = scene.features.normalized()
    no_reg = FeatureSet(fsn.image_size, fsn.arcs, [])
    assert set(feasible_solvers(no_reg, SOLVERS)) == {"5CA*", "6CA"}


# --- configuration ---------------------------------------------------------------------


def test_config_kv_roundtrip():
    c = RansacConfig(iterations=123, solvers=("6CA", "2PC+4CA"), weights=(3, 1), seed=9)
    back = RansacConfig.from_kv(c.to_kv())
    assert back == c
    assert c.weights == pytest.approx((0.75, 0.25))


def test_config_rejects_unknown_key():
    with pytest.raises(ParseError):
        RansacConfig.from_kv("iterations = 10\nbogus = 1\n")


def test_config_validation():
    with pytest.raises(ValueError):
        RansacConfig(solvers=("7CA",))
    with pytest.raises(ValueError):
        RansacConfig(weights=(1, 2))
    with pytest.raises(ValueError):
        RansacConfig(iterations=0)


def test_config_comments_and_overrides():
    c = RansacConfig.from_kv("# header\niterations = 50  # inline\ncontour_threshold = 2.0\n", seed=4)
    assert (c.iterations, c.contour_threshold, c.seed) == (50, 2.0, 4)


# --- robust estimation --------------------------------------------------------------------


def test_empty_feature_set_is_no_model():
    with pytest.raises(NoModel):
        run(FeatureSet((640, 480)))


@pytest.mark.parametrize("solver", SOLVERS)
def test_noiseless_single_solver_recovery(solver):
    sc = generate_scene(_spec(31))
    best, _ = run(sc.features, RansacConfig(iterations=300, solvers=(solver,), seed=1))
    cal = best.to_calibration(sc.features.frame)
    el, ef = relative_errors(sc.calibration, cal)
    assert el / 100 < 1e-6 and ef / 100 < 1e-6


def test_seeded_runs_are_identical():
    sc = generate_scene(_spec(32, sigma=0.5, outlier_fraction=0.2))
    cfg = RansacConfig(iterations=200, seed=5)
    a, ra = run(sc.features, cfg)
    b, rb = run(sc.features, cfg)
    assert a.output.lam == b.output.lam and a.output.f == b.output.f
    assert ra.to_dict() == rb.to_dict()
    assert list(a.arc_inliers) == list(b.arc_inliers)


def test_outliers_are_not_inliers():
    sc = generate_scene(_spec(33, sigma=0.3, outlier_fraction=0.3))
    best, _ = run(sc.features, RansacConfig(iterations=300))
    ids = {sc.features.arcs[i].id for i in best.arc_inliers}
    assert not ids & set(sc.outlier_arcs)


# --- local optimization ----------------------------------------------------------------------


def _gt_hypothesis(sc, cfg):
    fsn = sc.features.normalized()
    arrays = FeatureArrays.from_features(fsn, sc.features.frame.scale)
    return evaluate(calibration_to_output(sc.calibration), arrays, cfg), arrays


def test_lo_fixed_point_on_noiseless_truth():
    sc = generate_scene(_spec(34))
    cfg = RansacConfig()
    h, arrays = _gt_hypothesis(sc, cfg)
    out = local_optimize(h, sc.features, cfg, arrays)
    assert abs(out.output.lam - h.output.lam) <= 1e-10 * abs(h.output.lam)
    assert abs(out.output.f - h.output.f) <= 1e-10 * h.output.f
    assert out.score >= h.score


def test_lo_single_inlier_unchanged():
    sc = generate_scene(_spec(35))
    cfg = RansacConfig()
    h, arrays = _gt_hypothesis(sc, cfg)
    one = Hypothesis(h.output, h.arc_inliers[:1], h.region_inliers[:0], h.cost)
    assert local_optimize(one, sc.features, cfg, arrays) is one


def test_lo_never_lowers_score_and_improves_noisy_warp():
    before, after = [], []
    for seed in range(40):
        sc = generate_scene(_spec(200 + seed, sigma=1.0))
        cfg = RansacConfig(iterations=150, seed=seed, local_opt=False)
        h, _ = run(sc.features, cfg)
        h2 = local_optimize(h, sc.features, cfg)
        assert h2.score >= h.score
        grid = WarpGrid(*sc.features.image_size)
        before.append(warp_error(sc.calibration, h.to_calibration(sc.features.frame), grid)[1])
        after.append(warp_error(sc.calibration, h2.to_calibration(sc.features.frame), grid)[1])
    assert np.median(after) < np.median(before)
