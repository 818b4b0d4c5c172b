"""Versioned JSON files for scenes, emulated predictions and pipeline results.

Every file carries ``format_version`` and a ``kind``. Non-finite values are
never written: invalid seed points are stored as zeros next to the
``valid`` flags that mark them. Loaders check the document against a JSON
schema and the array shapes against each other, raising ``SchemaError``.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import jsonschema
import numpy as np

from .camera import Roi, SeedGrid
from .core import PartClass
from .errors import SchemaError
from .synthetic import (
    CameraSpec,
    GroundTruthPart,
    NoiseModel,
    ObjectSpec,
    PredictionBundle,
    RoiPrediction,
    Scene,
    SceneSpec,
)

FORMAT_VERSION = 1

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_camera = {
    "type": "object",
    "required": ["fx", "fy", "cx", "cy", "width", "height", "extrinsic"],
    "properties": {k: {"type": "number"} for k in ("fx", "fy", "cx", "cy")}
    | {"width": {"type": "integer", "minimum": 1}, "height": {"type": "integer", "minimum": 1},
       "extrinsic": {"type": "array", "minItems": 4, "maxItems": 4}},
}
_part = {
    "type": "object",
    "required": ["object", "part_class", "keypoint", "axis", "endpoints"],
    "properties": {"part_class": {"enum": [p.value for p in PartClass]},
                   "keypoint": _vec3, "axis": _vec3},
}


def _doc_schema(kind: str, required: list, properties: dict) -> dict:
    return {
        "type": "object",
        "required": ["format_version", "kind", *required],
        "properties": {"format_version": {"const": FORMAT_VERSION}, "kind": {"const": kind},
                       **properties},
    }


SCENE_SCHEMA = _doc_schema("scene", ["scene_id", "rng_seed", "camera", "gravity", "objects", "depth", "parts"], {
    "scene_id": {"type": "integer"},
    "rng_seed": {"type": "integer"},
    "camera": _camera,
    "gravity": _vec3,
    "objects": {"type": "array", "items": {"type": "object", "required": ["class", "pose", "dims"]}},
    "depth": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
    "parts": {"type": "array", "items": _part},
})

_roi_entry = {
    "type": "object",
    "required": ["part_index", "object_index", "part_class", "roi", "grid_n", "seeds", "mask",
                 "keypoint_offsets", "endpoint_offsets", "vectors", "scatter_offsets",
                 "label_logits", "paf_vectors", "score", "truth"],
    "properties": {
        "part_class": {"enum": [p.value for p in PartClass]},
        "roi": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
        "grid_n": {"type": "integer", "minimum": 1},
        "seeds": {"type": "object", "required": ["uv", "depth", "points", "valid"]},
        "score": {"type": "number", "minimum": 0, "maximum": 1},
        "truth": _part,
    },
}

PREDICTIONS_SCHEMA = _doc_schema("predictions", ["scene_id", "camera", "gravity", "rois"], {
    "scene_id": {"type": "integer"},
    "camera": _camera,
    "gravity": _vec3,
    "rois": {"type": "array", "items": _roi_entry},
})

ESTIMATES_SCHEMA = _doc_schema("estimates", ["scene_id", "camera", "parts", "failures"], {
    "scene_id": {"type": "integer"},
    "camera": _camera,
    "parts": {"type": "array", "items": {
        "type": "object", "required": ["roi", "part_class", "keypoint", "axis", "score"],
        "properties": {"part_class": {"enum": [p.value for p in PartClass]},
                       "keypoint": _vec3, "axis": _vec3}}},
    "failures": {"type": "array"},
})

OBJECTS_SCHEMA = _doc_schema("objects", ["scene_id", "camera", "parts", "objects"], {
    "scene_id": {"type": "integer"},
    "camera": _camera,
    "parts": ESTIMATES_SCHEMA["properties"]["parts"],
    "objects": {"type": "array", "items": {"type": "object", "required": ["parts", "object_class"]}},
})

SCHEMAS = {"scene": SCENE_SCHEMA, "predictions": PREDICTIONS_SCHEMA,
           "estimates": ESTIMATES_SCHEMA, "objects": OBJECTS_SCHEMA}


def _plain(x):
    """Recursively convert numpy values to JSON-native ones."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        x = float(x)
    if isinstance(x, float) and not np.isfinite(x):
        raise ValueError("refusing to write a non-finite number")
    return x


def dumps(doc: dict) -> str:
    return json.dumps(_plain(doc), indent=1, allow_nan=False) + "\n"


def write_json(doc: dict, path) -> Path:
    """Write atomically: a temporary file in the same directory is renamed over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = dumps(doc)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_json(path, kind: str | None = None) -> dict:
    """Load a document; FileNotFoundError propagates, anything malformed is a SchemaError."""
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if kind is None:
        kind = doc.get("kind") if isinstance(doc, dict) else None
        if kind not in SCHEMAS:
            raise SchemaError(f"{path}: unknown document kind {kind!r}")
    try:
        jsonschema.validate(doc, SCHEMAS[kind])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{path}: {where}: {exc.message}") from None
    return doc


def _array(d, key, shape, where):
    try:
        a = np.asarray(d[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: field {key!r} is not numeric") from exc
    if a.shape != shape:
        raise SchemaError(f"{where}: field {key!r} has shape {a.shape}, expected {shape}")
    if not np.all(np.isfinite(a)):
        raise SchemaError(f"{where}: field {key!r} holds non-finite values")
    return a


def _camera_from(d) -> CameraSpec:
    try:
        return CameraSpec.from_dict(d)
    except ValueError as exc:
        raise SchemaError(f"camera: {exc}") from exc


# ---------------------------------------------------------------------------
# scenes

def scene_to_dict(scene: Scene) -> dict:
    spec = scene.spec
    return {
        "format_version": FORMAT_VERSION,
        "kind": "scene",
        "scene_id": spec.scene_id,
        "rng_seed": spec.rng_seed,
        "camera": spec.camera.to_dict(),
        "gravity": np.asarray(spec.gravity).tolist(),
        "objects": [o.to_dict() for o in spec.objects],
        "depth": scene.depth.values,
        "parts": [{**p.to_dict(), "visible_pixels": int(np.count_nonzero(scene.labels == i))}
                  for i, p in enumerate(scene.parts)],
    }


def load_scene(path) -> tuple[SceneSpec, tuple, np.ndarray]:
    """Returns (spec, ground-truth parts, depth image)."""
    doc = read_json(path, "scene")
    cam = _camera_from(doc["camera"])
    try:
        spec = SceneSpec(tuple(ObjectSpec.from_dict(o) for o in doc["objects"]), cam,
                         np.asarray(doc["gravity"], dtype=float), doc["rng_seed"], doc["scene_id"])
        parts = tuple(GroundTruthPart.from_dict(p) for p in doc["parts"])
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    depth = _array(doc, "depth", (cam.height, cam.width), str(path))
    return spec, parts, depth


# ---------------------------------------------------------------------------
# predictions

def _roi_to_dict(r: RoiPrediction) -> dict:
    s = r.seeds
    return {
        "part_index": r.part_index,
        "object_index": r.object_index,
        "part_class": r.part_class.value,
        "roi": r.roi.to_list(),
        "grid_n": s.n,
        "seeds": {"uv": s.uv, "depth": s.depth,
                  "points": np.where(s.valid[:, None], s.points, 0.0), "valid": s.valid},
        "mask": r.mask,
        "gt_mask": r.gt_mask,
        "keypoint_offsets": r.keypoint_offsets,
        "endpoint_offsets": r.endpoint_offsets,
        "vectors": r.vectors,
        "scatter_offsets": r.scatter_offsets,
        "label_logits": r.label_logits,
        "paf_vectors": r.paf_vectors,
        "paf_target": r.paf_target,
        "score": r.score,
        "truth": r.truth.to_dict(),
    }


def predictions_to_dict(bundle: PredictionBundle) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "predictions",
        "scene_id": bundle.scene_id,
        "rng_seed": bundle.rng_seed,
        "camera": bundle.camera.to_dict(),
        "gravity": np.asarray(bundle.gravity).tolist(),
        "grid_n": bundle.grid_n,
        "noise": bundle.noise.to_dict(),
        "rois": [_roi_to_dict(r) for r in bundle.rois],
    }


def _roi_from_dict(d: dict, where: str) -> RoiPrediction:
    n = d["grid_n"]
    m = n * n
    sd = d["seeds"]
    valid = np.asarray(sd["valid"], dtype=bool)
    if valid.shape != (m,):
        raise SchemaError(f"{where}: seeds.valid has shape {valid.shape}, expected ({m},)")
    points = _array(sd, "points", (m, 3), where + "/seeds")
    points[~valid] = np.nan
    seeds = SeedGrid(n, _array(sd, "uv", (m, 2), where + "/seeds"),
                     _array(sd, "depth", (m,), where + "/seeds"), points, valid)
    paf = None if d["paf_vectors"] is None else _array(d, "paf_vectors", (m, 2), where)
    target = d.get("paf_target")
    mask = _array(d, "mask", (m,), where)
    try:
        roi = Roi(*d["roi"])
        truth = GroundTruthPart.from_dict(d["truth"])
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from exc
    return RoiPrediction(
        part_index=int(d["part_index"]), object_index=int(d["object_index"]),
        part_class=PartClass(d["part_class"]), roi=roi, seeds=seeds, mask=mask,
        gt_mask=_array(d, "gt_mask", (m,), where) if "gt_mask" in d else mask,
        keypoint_offsets=_array(d, "keypoint_offsets", (m, 3), where),
        endpoint_offsets=_array(d, "endpoint_offsets", (m, 2, 3), where),
        vectors=_array(d, "vectors", (m, 3), where),
        scatter_offsets=_array(d, "scatter_offsets", (m, 3), where),
        label_logits=_array(d, "label_logits", (m,), where),
        paf_vectors=paf, paf_target=None if target is None else np.asarray(target, dtype=float),
        score=float(d["score"]), truth=truth,
    )


def load_predictions(path) -> PredictionBundle:
    doc = read_json(path, "predictions")
    rois = [_roi_from_dict(r, f"{path}: rois/{i}") for i, r in enumerate(doc["rois"])]
    try:
        noise = NoiseModel(**doc.get("noise", {}))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: noise: {exc}") from exc
    return PredictionBundle(doc["scene_id"], _camera_from(doc["camera"]),
                            np.asarray(doc["gravity"], dtype=float), int(doc.get("grid_n", 0)),
                            noise, int(doc.get("rng_seed", 0)), rois)
