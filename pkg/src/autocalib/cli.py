"""Command-line interface: calibrate, synth, synth-bench and rectify."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import MissingRotation, NoModel, ParseError
from .evaluation import WarpGrid, relative_errors, run_sensitivity_bench, run_stability_bench, warp_error
from .features import features_to_dict, load_features, save_features
from .geometry import Calibration
from .ransac import RansacConfig, run
from .solvers import PATHS, SOLVERS
from .synth import SceneSpec, generate_scene

EXIT_OK, EXIT_PARSE, EXIT_NO_MODEL, EXIT_IO = 0, 2, 3, 4
QUICK_SCENES = 20

_VEC = {"type": "array", "items": {"type": "number"}}
_MAT = {"type": "array", "items": _VEC}
CALIBRATION_SCHEMA = {
    "type": "object",
    "required": ["lambda_px", "lambda_norm", "norm_scale", "f", "principal_point", "image_size"],
    "properties": {
        "lambda_px": {"type": "number"},
        "lambda_norm": {"type": "number"},
        "norm_scale": {"type": "number", "exclusiveMinimum": 0},
        "f": {"type": ["number", "null"]},
        "principal_point": {**_VEC, "minItems": 2, "maxItems": 2},
        "image_size": {**_VEC, "minItems": 2, "maxItems": 2},
        "R": {**_MAT, "minItems": 3, "maxItems": 3},
        "vanishing_line": {**_VEC, "minItems": 3, "maxItems": 3},
        "vanishing_points": _MAT,
    },
}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["tool", "version", "seed", "calibration", "inliers", "solver", "ransac", "config"],
    "properties": {
        "tool": {"const": "autocalib"},
        "version": {"type": "string"},
        "seed": {"type": "integer"},
        "calibration": CALIBRATION_SCHEMA,
        "inliers": {
            "type": "object",
            "required": ["arcs", "regions"],
            "properties": {
                "arcs": {"type": "array", "items": {"type": "integer"}},
                "regions": {"type": "array", "items": {"type": "integer"}},
            },
        },
        "solver": {"type": "string"},
        "mode": {"type": "string"},
        "score": {"type": "object"},
        "ransac": {"type": "object"},
        "config": {"type": "object"},
        "ground_truth": {
            "type": "object",
            "required": ["warp_rms", "lambda_rel_err_pct", "f_rel_err_pct"],
        },
    },
}


class UsageError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _parse_thresholds(s: str):
    try:
        a, b = (float(x) for x in s.split(","))
    except ValueError:
        raise UsageError("--thresholds expects CONTOUR,POINT in pixels") from None
    return a, b


def _parse_solvers(s: str) -> tuple:
    names = tuple(x.strip() for x in s.split(",") if x.strip())
    bad = [n for n in names if n not in SOLVERS]
    if bad or not names:
        raise UsageError(f"--solvers must be a comma list drawn from {', '.join(SOLVERS)}")
    return names


def load_calibration(path) -> Calibration:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e.msg} at line {e.lineno}") from None
    if "calibration" in d:
        d = d["calibration"]
    try:
        jsonschema.validate(d, CALIBRATION_SCHEMA)
        return Calibration.from_dict(d)
    except (jsonschema.ValidationError, ValueError, KeyError) as e:
        msg = e.message if isinstance(e, jsonschema.ValidationError) else str(e)
        raise ParseError(f"{path}: {msg}") from None


def _config(args) -> RansacConfig:
    over = {}
    if args.iters is not None:
        over["iterations"] = args.iters
    if args.seed is not None:
        over["seed"] = args.seed
    if args.solvers is not None:
        over["solvers"] = _parse_solvers(args.solvers)
        over["weights"] = ()
    if args.thresholds is not None:
        over["contour_threshold"], over["point_threshold"] = _parse_thresholds(args.thresholds)
    try:
        if args.config:
            return RansacConfig.load(args.config, **over)
        return RansacConfig(**over)
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_calibrate(args) -> int:
    config = _config(args)
    fs = load_features(args.features)
    best, rep = run(fs, config)
    calib = best.to_calibration(fs.frame)
    report = {
        "tool": "autocalib",
        "version": __version__,
        "seed": config.seed,
        "config": json.loads(json.dumps({k: v for k, v in vars(config).items()}, default=list)),
        "calibration": calib.to_dict(),
        "inliers": {
            "arcs": [int(fs.arcs[i].id) for i in best.arc_inliers],
            "regions": [int(fs.regions[i].id) for i in best.region_inliers],
        },
        "solver": best.solver,
        "mode": best.output.mode,
        "score": {"inliers": best.n_inliers, "truncated_cost": round(best.cost, 12)},
        "ransac": rep.to_dict(),
    }
    if args.gt:
        gt = load_calibration(args.gt)
        rms = warp_error(gt, calib, WarpGrid(*gt.image_size))[1]
        el, ef = relative_errors(gt, calib)
        report["ground_truth"] = {
            "warp_rms": rms,
            "lambda_rel_err_pct": el,
            "f_rel_err_pct": None if np.isnan(ef) else ef,
        }
    jsonschema.validate(report, REPORT_SCHEMA)
    _write(args.out, _dump(report))
    return EXIT_OK


def _write(path, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_synth(args) -> int:
    spec = SceneSpec.from_kv(Path(args.config).read_text()) if args.config else SceneSpec()
    if args.seed is not None:
        spec.seed = args.seed
    if args.sigma is not None:
        if args.sigma < 0:
            raise UsageError("--sigma must be non-negative")
        spec.sigma = args.sigma
    if args.outliers is not None:
        spec.outlier_fraction = args.outliers
    scene = generate_scene(spec)
    save_features(scene.features, args.out)
    if args.gt:
        Path(args.gt).write_text(_dump(scene.calibration.to_dict()))
    return EXIT_OK


def cmd_synth_bench(args) -> int:
    n = QUICK_SCENES if args.quick else args.scenes
    seed = 0 if args.seed is None else args.seed
    try:
        sigmas = tuple(float(s) for s in args.sigmas.split(","))
    except ValueError:
        raise UsageError("--sigmas expects a comma list of numbers") from None
    if any(s < 0 for s in sigmas):
        raise UsageError("noise levels must be non-negative")
    if args.solvers:
        wanted = _parse_solvers(args.solvers)
        paths = [p for p in PATHS if p[0] in wanted]
    else:
        paths = list(PATHS)
    if args.kind == "stability":
        rep = run_stability_bench(n, paths, seed)
    else:
        rep = run_sensitivity_bench(sigmas, n, args.samples, paths, seed)
    prefix = Path(args.out)
    Path(str(prefix) + ".csv").write_text(rep.to_csv())
    Path(str(prefix) + ".json").write_text(rep.summary_json())
    return EXIT_OK


def cmd_rectify(args) -> int:
    from PIL import Image

    from .rectify import rectify_image, to_uint8

    calib = load_calibration(args.report)
    img = np.asarray(Image.open(args.image))
    if tuple(img.shape[1::-1]) != tuple(int(v) for v in calib.image_size):
        raise ParseError("image size does not match the calibration")
    out, _ = rectify_image(img, calib, args.mode, args.plane)
    Image.fromarray(to_uint8(out)).save(args.out, format="PNG")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autocalib", description="Radial distortion and camera auto-calibration.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="robustly estimate a calibration from a feature file")
    c.add_argument("--features", required=True)
    c.add_argument("--config")
    c.add_argument("--solvers")
    c.add_argument("--iters", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--thresholds", help="CONTOUR,POINT inlier thresholds in pixels")
    c.add_argument("--gt", help="ground-truth calibration JSON")
    c.add_argument("--out", default="-")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("synth", help="write a synthetic feature file and its ground truth")
    s.add_argument("--out", required=True)
    s.add_argument("--gt")
    s.add_argument("--config", help="scene parameter key-value file")
    s.add_argument("--seed", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--outliers", type=float)
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("synth-bench", help="stability or noise-sensitivity benchmark")
    b.add_argument("--kind", choices=("stability", "sensitivity"), default="stability")
    b.add_argument("--scenes", type=int, default=1000)
    b.add_argument("--quick", action="store_true", help=f"{QUICK_SCENES} scenes")
    b.add_argument("--sigmas", default="0.1,0.5,1,2")
    b.add_argument("--samples", type=int, default=25)
    b.add_argument("--solvers")
    b.add_argument("--seed", type=int)
    b.add_argument("--out", required=True, help="output prefix for .csv and .json")
    b.set_defaults(func=cmd_synth_bench)

    r = sub.add_parser("rectify", help="undistort or rectify a PNG image")
    r.add_argument("--image", required=True)
    r.add_argument("--report", required=True, help="calibration report or calibration JSON")
    r.add_argument("--mode", choices=("undistort", "affine", "metric"), default="undistort")
    r.add_argument("--plane", type=int, choices=(0, 1, 2))
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rectify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        parser.error(str(e))  # exits with status 2
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (NoModel, MissingRotation) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NO_MODEL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
