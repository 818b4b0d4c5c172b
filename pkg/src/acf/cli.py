"""Command-line pipelines: synth -> estimate -> associate -> manip, plus evaluate and losscheck.

Exit codes: 0 on success (per-scene estimator failures are recorded in the
outputs, not fatal), 1 when an input file is missing, 2 for an invalid
configuration or a file that violates its schema.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .core import ObjectClass, PartInstance
from .errors import AcfError, InvalidSpec, SchemaError
from .estimation import AxisMethod, MeanShiftConfig, RansacConfig
from .evaluation import TABLE_THRESHOLDS, ThresholdSpec, map_curve, map_curve_translation, match_and_score, write_curve_csv
from .association import ObjectHypothesis
from .losses import (
    gradient_relative_error,
    loss_axis,
    loss_axis_grad,
    loss_direction,
    loss_direction_grad,
    loss_endpoint,
    loss_endpoint_grad,
    loss_inner,
    loss_inner_grad,
    loss_keypoint,
    loss_keypoint_grad,
    loss_label,
    loss_label_grad,
    loss_paf,
    loss_paf_grad,
    loss_vector,
    loss_vector_grad,
    numeric_gradient,
)
from .manipulation import PourParams
from .pipeline import EstimatedPart, EstimatorConfig, associate_parts, estimate_rois, plan_manipulation
from .synthetic import MIN_ROI_PIXELS, NoiseModel, emulate_predictions, generate_scene, random_scene_spec

EXIT_OK, EXIT_MISSING, EXIT_INVALID = 0, 1, 2

DEFAULT_CONFIG = {
    "seed": 0,
    "n_scenes": 10,
    "jobs": 1,
    "scene": {"min_objects": 1, "max_objects": 4, "classes": [c.value for c in ObjectClass]},
    "noise": {"offset_sigma": 0.0, "outlier_fraction": 0.0, "outlier_box": 0.5,
              "paf_angle_sigma": 0.0, "mask_flip_prob": 0.0},
    "estimator": {"axis_method": "endpoints", "bandwidth": 0.03, "max_iterations": 50,
                  "convergence_tol": 1e-5, "ransac_iterations": 200, "inlier_threshold": 0.005,
                  "min_inlier_fraction": 0.3, "mask_threshold": 0.5},
    "association": {"min_score": 0.5},
    "manipulation": {"H": 0.15, "R": 0.05, "tilt_max": 120.0, "steps": 10, "stroke": 0.03},
    "evaluation": {"min_visible_pixels": MIN_ROI_PIXELS,
                   "thresholds": [list(t) for t in TABLE_THRESHOLDS],
                   "angle_range": [1.0, 30.0, 30], "curve_translation": 0.05,
                   "translation_range": [0.005, 0.1, 20], "curve_angle": 15.0},
    "losscheck": {"max_rois": 3, "perturbation": 1e-2, "h": 1e-5},
}

INPUT_GLOBS = {"estimate": "predictions_*.json", "associate": "estimates_*.json",
               "manip": "objects_*.json", "evaluate": "estimates_*.json",
               "losscheck": "predictions_*.json"}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = DEFAULT_CONFIG
    if path is not None:
        with open(path) as f:
            try:
                user = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def _estimator_config(cfg: dict) -> EstimatorConfig:
    e = cfg["estimator"]
    try:
        return EstimatorConfig(
            axis_method=AxisMethod(e["axis_method"]),
            mean_shift=MeanShiftConfig(e["bandwidth"], int(e["max_iterations"]), e["convergence_tol"]),
            ransac=RansacConfig(int(e["ransac_iterations"]), e["inlier_threshold"],
                                e["min_inlier_fraction"], int(cfg["seed"])),
            mask_threshold=e["mask_threshold"],
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"estimator: {exc}") from exc


def _scene_seeds(seed: int, index: int) -> tuple[int, int]:
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(2)
    return int(state[0]), int(state[1])


def _resolve_inputs(paths, pattern: str) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            found = sorted(p.glob(pattern))
            if not found:
                raise FileNotFoundError(f"no {pattern} files in {p}")
            files.extend(found)
        elif p.is_file():
            files.append(p)
        else:
            raise FileNotFoundError(f"input not found: {p}")
    return files


def _parallel(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# synth

def _synth_one(args):
    cfg, index, out = args
    scene_seed, noise_seed = _scene_seeds(cfg["seed"], index)
    sc = cfg["scene"]
    spec = random_scene_spec(scene_seed, (sc["min_objects"], sc["max_objects"]), sc["classes"],
                             scene_id=index)
    scene = generate_scene(spec)
    bundle = emulate_predictions(scene, NoiseModel(**cfg["noise"]), noise_seed)
    io.write_json(io.scene_to_dict(scene), out / f"scene_{index:04d}.json")
    io.write_json(io.predictions_to_dict(bundle), out / f"predictions_{index:04d}.json")
    return index, len(bundle.rois)


def cmd_synth(cfg: dict, out: Path) -> dict:
    if int(cfg["n_scenes"]) < 1:
        raise ConfigError("n_scenes must be >= 1")
    try:
        NoiseModel(**cfg["noise"])
        [ObjectClass(c) for c in cfg["scene"]["classes"]]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    results = _parallel(_synth_one, [(cfg, i, out) for i in range(int(cfg["n_scenes"]))], int(cfg["jobs"]))
    return {"scenes": len(results), "rois": sum(r for _, r in results)}


# ---------------------------------------------------------------------------
# estimate / associate / manip

def _estimate_one(args):
    path, cfg, out = args
    bundle = io.load_predictions(path)
    parts, failures = estimate_rois(bundle.rois, _estimator_config(cfg))
    doc = {"format_version": io.FORMAT_VERSION, "kind": "estimates", "scene_id": bundle.scene_id,
           "camera": bundle.camera.to_dict(), "gravity": bundle.gravity,
           "axis_method": AxisMethod(cfg["estimator"]["axis_method"]).value,
           "parts": [p.to_dict() for p in parts], "failures": failures}
    io.write_json(doc, out / f"estimates_{bundle.scene_id:04d}.json")
    return {"scene_id": bundle.scene_id, "parts": len(parts), "failures": len(failures)}


def cmd_estimate(cfg: dict, out: Path, inputs) -> dict:
    _estimator_config(cfg)
    files = _resolve_inputs(inputs, INPUT_GLOBS["estimate"])
    rows = _parallel(_estimate_one, [(f, cfg, out) for f in files], int(cfg["jobs"]))
    summary = {"scenes": rows, "total_failures": sum(r["failures"] for r in rows)}
    io.write_json(summary, out / "estimate_summary.json")
    return summary


def _parts_from(doc) -> list[EstimatedPart]:
    try:
        return [EstimatedPart.from_dict(p) for p in doc["parts"]]
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"bad part entry: {exc}") from exc


def _associate_one(args):
    path, cfg, out = args
    doc = io.read_json(path, "estimates")
    parts = _parts_from(doc)
    cam = io._camera_from(doc["camera"])
    hyps = associate_parts(parts, cam.intrinsics, cfg["association"]["min_score"])
    res = {"format_version": io.FORMAT_VERSION, "kind": "objects", "scene_id": doc["scene_id"],
           "camera": doc["camera"], "gravity": doc.get("gravity", [0.0, 0.0, -1.0]),
           "parts": doc["parts"], "objects": [h.to_dict() for h in hyps]}
    io.write_json(res, out / f"objects_{doc['scene_id']:04d}.json")
    return {"scene_id": doc["scene_id"], "objects": len(hyps)}


def cmd_associate(cfg: dict, out: Path, inputs) -> dict:
    files = _resolve_inputs(inputs, INPUT_GLOBS["associate"])
    return {"scenes": _parallel(_associate_one, [(f, cfg, out) for f in files], int(cfg["jobs"]))}


def _manip_one(args):
    path, cfg, out = args
    doc = io.read_json(path, "objects")
    parts = _parts_from(doc)
    try:
        hyps = [ObjectHypothesis(tuple(int(i) for i in o["parts"]),
                                 None if o["object_class"] is None else ObjectClass(o["object_class"]))
                for o in doc["objects"]]
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    if any(i < 0 or i >= len(parts) for h in hyps for i in h.parts):
        raise SchemaError(f"{path}: object references a missing part")
    m = cfg["manipulation"]
    params = PourParams(m["H"], m["R"], tuple(np.linspace(0.0, m["tilt_max"], int(m["steps"]))), int(m["steps"]))
    up = -np.asarray(doc.get("gravity", [0.0, 0.0, -1.0]), dtype=float)
    world = np.asarray(doc["camera"]["extrinsic"], dtype=float)
    plan = plan_manipulation(parts, hyps, world, params, m["stroke"], int(m["steps"]), up)
    res = {"format_version": io.FORMAT_VERSION, "kind": "manipulation", "scene_id": doc["scene_id"],
           **plan.to_dict()}
    io.write_json(res, out / f"manip_{doc['scene_id']:04d}.json")
    return {"scene_id": doc["scene_id"], "grasps": len(plan.grasps),
            "trajectories": len(plan.trajectories), "skipped": len(plan.skipped)}


def cmd_manip(cfg: dict, out: Path, inputs) -> dict:
    files = _resolve_inputs(inputs, INPUT_GLOBS["manip"])
    return {"scenes": _parallel(_manip_one, [(f, cfg, out) for f in files], int(cfg["jobs"]))}


# ---------------------------------------------------------------------------
# evaluate

def _ground_truth(paths, min_pixels: int) -> dict:
    gts = {}
    for f in _resolve_inputs(paths, "scene_*.json"):
        doc = io.read_json(f, "scene")
        keep = [p for p in doc["parts"] if p.get("visible_pixels", min_pixels) >= min_pixels]
        try:
            gts[doc["scene_id"]] = [PartInstance.from_dict({**p, "score": 1.0}) for p in keep]
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"{f}: {exc}") from exc
    return gts


def cmd_evaluate(cfg: dict, out: Path, inputs, ground_truth) -> dict:
    ev = cfg["evaluation"]
    if not ground_truth:
        raise ConfigError("evaluate needs --ground-truth scene files")
    try:
        specs = [ThresholdSpec(float(a), float(t)) for a, t in ev["thresholds"]]
        angles = np.linspace(*ev["angle_range"][:2], int(ev["angle_range"][2]))
        trans = np.linspace(*ev["translation_range"][:2], int(ev["translation_range"][2]))
        ThresholdSpec(float(ev["curve_angle"]), float(ev["curve_translation"]))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"evaluation: {exc}") from exc
    gts = _ground_truth(ground_truth, int(ev["min_visible_pixels"]))
    preds, gt_lists, failures, ids = [], [], 0, []
    for f in _resolve_inputs(inputs, INPUT_GLOBS["evaluate"]):
        doc = io.read_json(f, "estimates")
        sid = doc["scene_id"]
        if sid not in gts:
            raise FileNotFoundError(f"no ground-truth scene for scene_id {sid}")
        preds.append([p.instance() for p in _parts_from(doc)])
        gt_lists.append(gts[sid])
        failures += len(doc["failures"])
        ids.append(sid)
    reports = [match_and_score(preds, gt_lists, s).to_dict() for s in specs]
    write_curve_csv(map_curve(preds, gt_lists, angles, float(ev["curve_translation"])),
                    out / "curve_rotation.csv")
    write_curve_csv(map_curve_translation(preds, gt_lists, trans, float(ev["curve_angle"])),
                    out / "curve_translation.csv")
    report = {"format_version": io.FORMAT_VERSION, "kind": "evaluation", "scenes": ids,
              "estimator_failures": failures, "matching": "greedy by descending score, one-to-one",
              "reports": reports}
    io.write_json(report, out / "report.json")
    return report


# ---------------------------------------------------------------------------
# losscheck

def _roi_losses(roi, rng, pert: float, h: float, check: bool) -> dict:
    """Loss values at the stored predictions and gradient residuals near them."""
    from .synthetic import scatter_targets

    s = roi.seeds
    pts = np.where(s.valid[:, None], s.points, 0.0)
    m = np.where(s.valid, roi.gt_mask, 0.0)
    truth = roi.truth
    n_star = truth.acf.axis
    kp_t = truth.acf.keypoint - pts
    ep_t = truth.endpoints[None, :, :] - pts[:, None, :]
    _, labels = scatter_targets(pts, truth.endpoints)
    length = np.linalg.norm(truth.endpoints[1] - truth.endpoints[0])
    # direction loss wants unit endpoint differences; rescale by the true length
    dir_pred = roi.endpoint_offsets / length

    cases = {
        "keypoint": (loss_keypoint, loss_keypoint_grad, roi.keypoint_offsets, (kp_t, m)),
        "endpoint": (loss_endpoint, loss_endpoint_grad, roi.endpoint_offsets, (ep_t, m)),
        "axis": (loss_axis, loss_axis_grad, roi.endpoint_offsets, (ep_t, n_star, m)),
        "direction": (loss_direction, loss_direction_grad, dir_pred, (n_star, m)),
        "vector": (loss_vector, loss_vector_grad, roi.vectors, (n_star, m)),
        "inner": (loss_inner, loss_inner_grad, roi.scatter_offsets, (n_star, m)),
        "label": (loss_label, loss_label_grad, roi.label_logits, (labels, m)),
    }
    if roi.paf_vectors is not None and roi.paf_target is not None:
        cases["paf"] = (loss_paf, loss_paf_grad, roi.paf_vectors, (roi.paf_target, m))
    res = {}
    for name, (fn, gfn, pred, rest) in cases.items():
        entry = {"value": fn(pred, *rest)}
        if check:
            # keep every coordinate at least ``pert`` away from the L1 kinks
            z = rng.standard_normal(pred.shape)
            x = pred + pert * np.sign(z) * (1.0 + np.abs(z))
            num = numeric_gradient(lambda z: fn(z, *rest), x, h)
            entry["grad_rel_error"] = gradient_relative_error(gfn(x, *rest), num)
        res[name] = entry
    return res


def cmd_losscheck(cfg: dict, out: Path, inputs) -> dict:
    lc = cfg["losscheck"]
    rng = np.random.default_rng(int(cfg["seed"]))
    scenes = []
    for f in _resolve_inputs(inputs, INPUT_GLOBS["losscheck"]):
        bundle = io.load_predictions(f)
        rows = []
        for k, roi in enumerate(bundle.rois):
            if not np.any(roi.gt_mask > 0):
                continue
            try:
                losses = _roi_losses(roi, rng, lc["perturbation"], lc["h"], k < int(lc["max_rois"]))
            except AcfError as exc:
                rows.append({"roi": k, "error": f"{type(exc).__name__}: {exc}"})
                continue
            rows.append({"roi": k, "part_class": roi.part_class.value, "losses": losses})
        scenes.append({"scene_id": bundle.scene_id, "rois": rows})
    doc = {"format_version": io.FORMAT_VERSION, "kind": "losscheck", "scenes": scenes}
    io.write_json(doc, out / "losscheck.json")
    return doc


def _print_losscheck(doc: dict) -> None:
    print(f"{'scene':>5} {'roi':>4} {'part':<10} {'loss':<10} {'value':>12} {'grad rel err':>13}")
    for sc in doc["scenes"]:
        for row in sc["rois"]:
            if "error" in row:
                print(f"{sc['scene_id']:>5} {row['roi']:>4} {row['error']}")
                continue
            for name, e in row["losses"].items():
                g = e.get("grad_rel_error")
                gs = "" if g is None else f"{g:.3e}"
                print(f"{sc['scene_id']:>5} {row['roi']:>4} {row['part_class']:<10} {name:<10} "
                      f"{e['value']:>12.6g} {gs:>13}")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acf", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate scenes and emulated predictions")
    s.add_argument("--n-scenes", type=int)
    s.add_argument("--offset-sigma", type=float, help="offset noise in meters")
    s.add_argument("--outlier-fraction", type=float)
    s.add_argument("--paf-angle-sigma", type=float, help="degrees")

    e = sub.add_parser("estimate", parents=[common], help="predictions -> part frames")
    e.add_argument("inputs", nargs="+", help="prediction files or directories")
    e.add_argument("--axis-method", choices=[m.value for m in AxisMethod])

    for name, what in (("associate", "part frames -> objects"), ("manip", "objects -> grasps and trajectories")):
        a = sub.add_parser(name, parents=[common], help=what)
        a.add_argument("inputs", nargs="+")

    v = sub.add_parser("evaluate", parents=[common], help="AP report and curves")
    v.add_argument("inputs", nargs="+", help="estimate files or directories")
    v.add_argument("--ground-truth", nargs="+", required=True, help="scene files or directories")

    lc = sub.add_parser("losscheck", parents=[common], help="loss values and gradient checks")
    lc.add_argument("inputs", nargs="+", help="prediction files or directories")
    return p


def _overrides(args) -> dict:
    o: dict = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.jobs is not None:
        o["jobs"] = args.jobs
    if getattr(args, "n_scenes", None) is not None:
        o["n_scenes"] = args.n_scenes
    noise = {k: getattr(args, k) for k in ("offset_sigma", "outlier_fraction", "paf_angle_sigma")
             if getattr(args, k, None) is not None}
    if noise:
        o["noise"] = noise
    if getattr(args, "axis_method", None) is not None:
        o["estimator"] = {"axis_method": args.axis_method}
    return o


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        cmd = args.command
        if cmd == "synth":
            result = cmd_synth(cfg, out)
        elif cmd == "estimate":
            result = cmd_estimate(cfg, out, args.inputs)
        elif cmd == "associate":
            result = cmd_associate(cfg, out, args.inputs)
        elif cmd == "manip":
            result = cmd_manip(cfg, out, args.inputs)
        elif cmd == "evaluate":
            result = cmd_evaluate(cfg, out, args.inputs, args.ground_truth)
        else:
            result = cmd_losscheck(cfg, out, args.inputs)
            _print_losscheck(result)
            return EXIT_OK
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, SchemaError, InvalidSpec) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if cmd == "estimate":
        print(f"{len(result['scenes'])} scenes, {result['total_failures']} estimator failures")
    elif cmd == "evaluate":
        for r in result["reports"]:
            print(f"{r['threshold_deg']:g}deg|{r['threshold_m'] * 100:g}cm  mAP {r['mean_ap']:.2f}")
    else:
        print(json.dumps(result, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
