"""Synthetic tabletop scenes, emulated network outputs and brute-force oracles.

Objects are built from parametric primitives in an object frame whose z axis
is up and whose base rests on z = 0:

* container: capped cylinder; keypoint at the box center, axis bottom -> top
* handle: half torus on the container's +x side; keypoint at the outer
  vertical tangent point, axis pointing back at the container
* stir: box along +x; keypoint at its center, axis tail -> head
* scoop: lower half ellipsoid past the head of the stir; keypoint at its box
  center, axis up

Depth is rendered by exact ray/primitive intersection (the torus through a
quartic solved per ray) over an infinite table plane at world z = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .camera import DEFAULT_GRID, CameraIntrinsics, DepthImage, Roi, SeedGrid, sample_seeds
from .core import Acf, ObjectClass, PartClass, compatible_pairs, parts_of
from .errors import InvalidSpec

DEFAULT_DIMS: dict[ObjectClass, dict[str, float]] = {
    ObjectClass.BOTTLE: {"radius": 0.035, "height": 0.20},
    ObjectClass.MUG: {"radius": 0.04, "height": 0.09, "handle_radius": 0.025, "handle_tube": 0.007},
    ObjectClass.BOWL: {"radius": 0.07, "height": 0.06},
    ObjectClass.SPOON: {"stir_length": 0.12, "stir_width": 0.014, "stir_thickness": 0.008,
                        "scoop_a": 0.024, "scoop_b": 0.018, "scoop_c": 0.014},
    ObjectClass.SPATULA: {"stir_length": 0.14, "stir_width": 0.016, "stir_thickness": 0.01,
                          "scoop_a": 0.035, "scoop_b": 0.03, "scoop_c": 0.01},
    ObjectClass.HAMMER: {"stir_length": 0.22, "stir_width": 0.022, "stir_thickness": 0.022},
}

LABEL_LOGIT = 4.0
MIN_ROI_PIXELS = 30


# ---------------------------------------------------------------------------
# ray / primitive intersection; rays have unit directions, misses are inf

def _first_positive(*ts):
    t = np.stack(ts)
    t = np.where(t > 1e-9, t, np.inf)
    return t.min(axis=0)


def _hit_plane(o, d, normal, offset):
    denom = d @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (offset - o @ normal) / denom
    return np.where(np.abs(denom) > 1e-12, t, np.inf)


def _hit_cylinder(o, d, r, z0, z1):
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - r * r
    disc = b * b - 4 * a * c
    ok = (disc >= 0) & (a > 1e-15)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    safe_a = np.where(ok, a, 1.0)
    sides = []
    for t in ((-b - sq) / (2 * safe_a), (-b + sq) / (2 * safe_a)):
        z = o[:, 2] + t * d[:, 2]
        sides.append(np.where(ok & (z >= z0) & (z <= z1), t, np.inf))
    caps = []
    for z in (z0, z1):
        t = _hit_plane(o, d, np.array([0.0, 0.0, 1.0]), z)
        p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
        caps.append(np.where(p[:, 0] ** 2 + p[:, 1] ** 2 <= r * r, t, np.inf))
    return _first_positive(*sides, *caps)


def _hit_box(o, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    t1 = np.nan_to_num(t1, nan=-np.inf)
    t2 = np.nan_to_num(t2, nan=np.inf)
    tmin = np.minimum(t1, t2).max(axis=1)
    tmax = np.maximum(t1, t2).min(axis=1)
    hit = tmax >= np.maximum(tmin, 0.0)
    t = np.where(tmin > 1e-9, tmin, tmax)
    return np.where(hit, t, np.inf)


def _hit_half_ellipsoid(o, d, center, radii):
    """Solid lower half of an axis-aligned ellipsoid, closed by a flat top."""
    s = 1.0 / np.asarray(radii)
    oo = (o - center) * s
    dd = d * s
    a = (dd**2).sum(1)
    b = 2 * (oo * dd).sum(1)
    c = (oo**2).sum(1) - 1.0
    disc = b * b - 4 * a * c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    shell = []
    for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
        z = oo[:, 2] + t * dd[:, 2]
        shell.append(np.where(ok & (z <= 0), t, np.inf))
    t = _hit_plane(o, d, np.array([0.0, 0.0, 1.0]), center[2])
    p = (o + np.where(np.isfinite(t), t, 0.0)[:, None] * d - center) * s
    top = np.where(p[:, 0] ** 2 + p[:, 1] ** 2 <= 1.0, t, np.inf)
    return _first_positive(*shell, top)


def _hit_torus_arc(o, d, center, major, minor):
    """Half torus with its ring in the xz plane, keeping the x >= 0 half."""
    out = np.full(len(o), np.inf)
    oc = o - center
    t0 = -(oc * d).sum(1)
    closest = oc + t0[:, None] * d
    near = (closest**2).sum(1) <= (major + minor) ** 2
    if not near.any():
        return out
    p0, dd, t0 = closest[near], d[near], t0[near]
    K = major**2 - minor**2
    B = 2 * (p0 * dd).sum(1)
    C = (p0**2).sum(1)
    A2 = dd[:, 0] ** 2 + dd[:, 2] ** 2
    B2 = 2 * (p0[:, 0] * dd[:, 0] + p0[:, 2] * dd[:, 2])
    C2 = p0[:, 0] ** 2 + p0[:, 2] ** 2
    R4 = 4 * major**2
    a3 = 2 * B
    a2 = B * B + 2 * (C + K) - R4 * A2
    a1 = 2 * B * (C + K) - R4 * B2
    a0 = (C + K) ** 2 - R4 * C2
    n = len(p0)
    comp = np.zeros((n, 4, 4))
    comp[:, 1, 0] = comp[:, 2, 1] = comp[:, 3, 2] = 1.0
    comp[:, :, 3] = -np.stack([a0, a1, a2, a3], axis=1)
    roots = np.linalg.eigvals(comp)
    real = np.abs(roots.imag) < 1e-7
    s = roots.real.copy()
    for _ in range(3):
        f = (((s + a3[:, None]) * s + a2[:, None]) * s + a1[:, None]) * s + a0[:, None]
        df = ((4 * s + 3 * a3[:, None]) * s + 2 * a2[:, None]) * s + a1[:, None]
        s = np.where(np.abs(df) > 1e-18, s - f / np.where(df == 0, 1.0, df), s)
    hx = p0[:, 0, None] + s * dd[:, 0, None]
    t = s + t0[:, None]
    t = np.where(real & (hx >= 0) & (t > 1e-9), t, np.inf)
    out[np.flatnonzero(near)] = t.min(axis=1)
    return out


# ---------------------------------------------------------------------------
# object models

@dataclass(frozen=True)
class PartModel:
    part_class: PartClass
    hit: Callable[[np.ndarray, np.ndarray], np.ndarray]
    keypoint: np.ndarray
    axis: np.ndarray
    endpoints: np.ndarray  # (2, 3), tail then head


def _positive_dims(obj: ObjectClass, dims: dict) -> dict:
    merged = {**DEFAULT_DIMS[obj], **(dims or {})}
    unknown = set(merged) - set(DEFAULT_DIMS[obj])
    if unknown:
        raise InvalidSpec(f"unknown {obj.value} dimensions: {sorted(unknown)}")
    bad = [k for k, v in merged.items() if not (np.isfinite(v) and v > 0)]
    if bad:
        raise InvalidSpec(f"{obj.value} dimensions must be positive: {bad}")
    return merged


def object_parts(obj: ObjectClass, dims: Optional[dict] = None) -> list[PartModel]:
    """Primitive parts of an object in its own frame."""
    obj = ObjectClass(obj)
    g = _positive_dims(obj, dims)
    up = np.array([0.0, 0.0, 1.0])
    parts = []
    if PartClass.CONTAINER in parts_of(obj):
        r, h = g["radius"], g["height"]
        parts.append(PartModel(
            PartClass.CONTAINER,
            lambda o, d, r=r, h=h: _hit_cylinder(o, d, r, 0.0, h),
            np.array([0.0, 0.0, h / 2]), up,
            np.array([[0.0, 0.0, 0.0], [0.0, 0.0, h]]),
        ))
    if PartClass.HANDLE in parts_of(obj):
        r, h, R, tube = g["radius"], g["height"], g["handle_radius"], g["handle_tube"]
        if R + tube >= h / 2:
            raise InvalidSpec("handle does not fit on the container")
        c = np.array([r, 0.0, h / 2])
        outer = np.array([r + R + tube, 0.0, h / 2])
        parts.append(PartModel(
            PartClass.HANDLE,
            lambda o, d, c=c, R=R, tube=tube: _hit_torus_arc(o, d, c, R, tube),
            outer, np.array([-1.0, 0.0, 0.0]),
            np.array([outer, c]),
        ))
    if PartClass.STIR in parts_of(obj):
        L, w, th = g["stir_length"], g["stir_width"], g["stir_thickness"]
        total = L + 2 * g.get("scoop_a", 0.0)
        x0 = -total / 2
        lo = np.array([x0, -w / 2, 0.0])
        hi = np.array([x0 + L, w / 2, th])
        parts.append(PartModel(
            PartClass.STIR,
            lambda o, d, lo=lo, hi=hi: _hit_box(o, d, lo, hi),
            np.array([x0 + L / 2, 0.0, th / 2]), np.array([1.0, 0.0, 0.0]),
            np.array([[x0, 0.0, th / 2], [x0 + L, 0.0, th / 2]]),
        ))
        if PartClass.SCOOP in parts_of(obj):
            a, b, cz = g["scoop_a"], g["scoop_b"], g["scoop_c"]
            center = np.array([x0 + L + a, 0.0, cz])
            radii = np.array([a, b, cz])
            parts.append(PartModel(
                PartClass.SCOOP,
                lambda o, d, center=center, radii=radii: _hit_half_ellipsoid(o, d, center, radii),
                np.array([center[0], 0.0, cz / 2]), up,
                np.array([[center[0], 0.0, 0.0], [center[0], 0.0, cz]]),
            ))
    return parts


def footprint_radius(obj: ObjectClass, dims: Optional[dict] = None) -> float:
    g = _positive_dims(ObjectClass(obj), dims)
    if obj in (ObjectClass.SPOON, ObjectClass.SPATULA, ObjectClass.HAMMER):
        return (g["stir_length"] + 2 * g.get("scoop_a", 0.0)) / 2
    extra = g["handle_radius"] + g["handle_tube"] if obj == ObjectClass.MUG else 0.0
    return g["radius"] + extra


# ---------------------------------------------------------------------------
# scene specification and generation

def _orthonormal(R) -> bool:
    R = np.asarray(R, dtype=float)
    return R.shape == (3, 3) and np.allclose(R.T @ R, np.eye(3), atol=1e-9) and np.linalg.det(R) > 0


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world transform for a camera with x right, y down, z forward."""
    eye = np.asarray(eye, dtype=float)
    f = np.asarray(target, dtype=float) - eye
    f /= np.linalg.norm(f)
    x = np.cross(f, up)
    x /= np.linalg.norm(x)
    y = np.cross(f, x)
    T = np.eye(4)
    T[:3, :3] = np.column_stack([x, y, f])
    T[:3, 3] = eye
    return T


@dataclass(frozen=True)
class CameraSpec:
    intrinsics: CameraIntrinsics = CameraIntrinsics(400.0, 400.0, 159.5, 119.5)
    width: int = 320
    height: int = 240
    extrinsic: np.ndarray = field(
        default_factory=lambda: look_at((0.0, -0.62, 0.62), (0.0, 0.0, 0.03)))

    def to_dict(self) -> dict:
        return {**self.intrinsics.to_dict(), "width": self.width, "height": self.height,
                "extrinsic": np.asarray(self.extrinsic).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraSpec":
        return cls(CameraIntrinsics(d["fx"], d["fy"], d["cx"], d["cy"]), int(d["width"]),
                   int(d["height"]), np.asarray(d["extrinsic"], dtype=float))


@dataclass(frozen=True)
class ObjectSpec:
    object_class: ObjectClass
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dims: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"class": ObjectClass(self.object_class).value,
                "pose": {"rotation": np.asarray(self.rotation).tolist(),
                         "translation": np.asarray(self.translation).tolist()},
                "dims": dict(self.dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectSpec":
        return cls(ObjectClass(d["class"]), np.asarray(d["pose"]["rotation"], dtype=float),
                   np.asarray(d["pose"]["translation"], dtype=float), dict(d.get("dims", {})))


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple
    camera: CameraSpec = field(default_factory=CameraSpec)
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -1.0]))
    rng_seed: int = 0
    scene_id: int = 0


@dataclass(frozen=True)
class GroundTruthPart:
    object_index: int
    part_class: PartClass
    acf: Acf
    endpoints: np.ndarray

    def to_dict(self) -> dict:
        return {"object": self.object_index, "part_class": self.part_class.value,
                **self.acf.to_dict(), "endpoints": np.asarray(self.endpoints).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthPart":
        return cls(int(d["object"]), PartClass(d["part_class"]), Acf(d["keypoint"], d["axis"]),
                   np.asarray(d["endpoints"], dtype=float))


@dataclass(frozen=True)
class Scene:
    spec: SceneSpec
    parts: tuple
    depth: DepthImage
    labels: np.ndarray  # (H, W) part index, -1 for background

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.spec.camera.intrinsics

    def world_from_camera(self) -> np.ndarray:
        return np.asarray(self.spec.camera.extrinsic, dtype=float)


def _camera_rays(cam: CameraSpec) -> np.ndarray:
    K = cam.intrinsics
    v, u = np.mgrid[0:cam.height, 0:cam.width].astype(float)
    d = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def validate_spec(spec: SceneSpec) -> None:
    if not _orthonormal(np.asarray(spec.camera.extrinsic)[:3, :3]):
        raise InvalidSpec("camera extrinsic rotation is not orthonormal")
    g = np.asarray(spec.gravity, dtype=float)
    if abs(np.linalg.norm(g) - 1.0) > 1e-9:
        raise InvalidSpec("gravity must be a unit vector")
    if spec.camera.width < 1 or spec.camera.height < 1:
        raise InvalidSpec("image size must be positive")
    for o in spec.objects:
        if not _orthonormal(o.rotation):
            raise InvalidSpec(f"{ObjectClass(o.object_class).value} rotation is not orthonormal")
        _positive_dims(ObjectClass(o.object_class), o.dims)


def generate_scene(spec: SceneSpec) -> Scene:
    """Instantiate the objects, derive ground-truth frames and render depth."""
    validate_spec(spec)
    T_wc = np.asarray(spec.camera.extrinsic, dtype=float)
    R_cw = T_wc[:3, :3].T
    t_cw = -R_cw @ T_wc[:3, 3]
    rays = _camera_rays(spec.camera)
    n_px = len(rays)

    labels = np.full(n_px, -1, dtype=int)
    up_c = R_cw @ np.array([0.0, 0.0, 1.0])
    table_t = _hit_plane(np.zeros((n_px, 3)), rays, up_c, up_c @ t_cw)
    best_t = np.where(table_t > 1e-9, table_t, np.inf)

    gt = []
    origin = np.zeros(3)
    for oi, o in enumerate(spec.objects):
        R_co = R_cw @ np.asarray(o.rotation, dtype=float)
        t_co = R_cw @ np.asarray(o.translation, dtype=float) + t_cw
        o_loc = (R_co.T @ (origin - t_co))[None, :].repeat(n_px, axis=0)
        d_loc = rays @ R_co
        for part in object_parts(o.object_class, o.dims):
            t = part.hit(o_loc, d_loc)
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            labels[closer] = len(gt)
            gt.append(GroundTruthPart(
                oi, part.part_class,
                Acf(R_co @ part.keypoint + t_co, R_co @ part.axis),
                part.endpoints @ R_co.T + t_co,
            ))
    depth = np.where(np.isfinite(best_t), best_t * rays[:, 2], 0.0)
    shape = (spec.camera.height, spec.camera.width)
    return Scene(spec, tuple(gt), DepthImage(depth.reshape(shape)), labels.reshape(shape))


def yaw(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_scene_spec(rng_seed: int, n_objects=(1, 4), classes=tuple(ObjectClass),
                      camera: Optional[CameraSpec] = None, scene_id: int = 0,
                      area=(0.26, 0.18), dim_jitter: float = 0.1, margin: float = 0.02) -> SceneSpec:
    """Random non-overlapping tabletop layout with yaw-only object poses."""
    rng = np.random.default_rng(rng_seed)
    lo, hi = (n_objects, n_objects) if np.isscalar(n_objects) else n_objects
    count = int(rng.integers(lo, hi + 1))
    classes = [ObjectClass(c) for c in classes]
    objects, placed = [], []
    attempts = 0
    while len(objects) < count:
        attempts += 1
        if attempts > 5000:
            raise InvalidSpec(f"could not place {count} objects without overlap")
        cls = classes[int(rng.integers(len(classes)))]
        dims = {k: v * float(rng.uniform(1 - dim_jitter, 1 + dim_jitter))
                for k, v in DEFAULT_DIMS[cls].items()}
        radius = footprint_radius(cls, dims)
        xy = rng.uniform(-1.0, 1.0, size=2) * np.asarray(area)
        if any(np.linalg.norm(xy - p) < radius + r + margin for p, r in placed):
            continue
        placed.append((xy, radius))
        objects.append(ObjectSpec(cls, yaw(float(rng.uniform(0, 2 * np.pi))),
                                  np.array([xy[0], xy[1], 0.0]), dims))
    return SceneSpec(tuple(objects), camera or CameraSpec(), rng_seed=rng_seed, scene_id=scene_id)


# ---------------------------------------------------------------------------
# emulated network outputs

@dataclass(frozen=True)
class NoiseModel:
    offset_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_box: float = 0.5
    paf_angle_sigma: float = 0.0
    mask_flip_prob: float = 0.0

    def __post_init__(self):
        if self.offset_sigma < 0 or self.outlier_box < 0 or self.paf_angle_sigma < 0:
            raise ValueError("noise scales must be non-negative")
        if not (0 <= self.outlier_fraction <= 1 and 0 <= self.mask_flip_prob <= 1):
            raise ValueError("probabilities must lie in [0, 1]")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RoiPrediction:
    part_index: int
    object_index: int
    part_class: PartClass
    roi: Roi
    seeds: SeedGrid
    mask: np.ndarray
    gt_mask: np.ndarray
    keypoint_offsets: np.ndarray  # (n, 3)
    endpoint_offsets: np.ndarray  # (n, 2, 3)
    vectors: np.ndarray  # (n, 3)
    scatter_offsets: np.ndarray  # (n, 3)
    label_logits: np.ndarray  # (n,)
    paf_vectors: Optional[np.ndarray]  # (n, 2)
    paf_target: Optional[np.ndarray]  # (2,)
    score: float
    truth: GroundTruthPart


@dataclass
class PredictionBundle:
    scene_id: int
    camera: CameraSpec
    gravity: np.ndarray
    grid_n: int
    noise: NoiseModel
    rng_seed: int
    rois: list


def scatter_targets(points, endpoints):
    """Feet of the perpendiculars onto the axis line and closer-endpoint labels.

    Label 1 means the foot lies closer to the second (head) endpoint.
    """
    e1, e2 = np.asarray(endpoints, dtype=float)
    n = (e2 - e1) / np.linalg.norm(e2 - e1)
    s = (np.asarray(points) - e1) @ n
    feet = e1 + s[:, None] * n
    labels = (s > np.linalg.norm(e2 - e1) / 2).astype(float)
    return feet, labels


def _paf_partners(scene: Scene) -> dict[int, int]:
    partner = {}
    pairs = compatible_pairs()
    for i, a in enumerate(scene.parts):
        for j, b in enumerate(scene.parts):
            if i != j and a.object_index == b.object_index and (
                    (a.part_class, b.part_class) in pairs or (b.part_class, a.part_class) in pairs):
                partner[i] = j
    return partner


def _rotate2d(v, angles):
    c, s = np.cos(angles), np.sin(angles)
    return np.stack([c * v[..., 0] - s * v[..., 1], s * v[..., 0] + c * v[..., 1]], axis=-1)


def _random_units(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def emulate_predictions(scene: Scene, noise: NoiseModel = NoiseModel(), rng_seed: int = 0,
                        grid_n: int = DEFAULT_GRID, min_pixels: int = MIN_ROI_PIXELS) -> PredictionBundle:
    """Per-ROI seeds and head outputs derived from the ground truth, then perturbed.

    One ROI is emitted per part with at least ``min_pixels`` visible pixels.
    Random draws are made at unit scale and multiplied by the noise
    parameters, so the same seed couples runs that differ only in scale.
    """
    rng = np.random.default_rng(rng_seed)
    K = scene.intrinsics
    h, w = scene.labels.shape
    partner = _paf_partners(scene)
    rois = []
    for pi, part in enumerate(scene.parts):
        rows, cols = np.nonzero(scene.labels == pi)
        if len(rows) < min_pixels:
            continue
        roi = Roi(cols.min() - 0.5, rows.min() - 0.5, cols.max() + 0.5, rows.max() + 0.5)
        seeds = sample_seeds(roi, scene.depth, K, grid_n)
        m = len(seeds)
        pix_c = np.clip(np.rint(seeds.uv[:, 0]).astype(int), 0, w - 1)
        pix_r = np.clip(np.rint(seeds.uv[:, 1]).astype(int), 0, h - 1)
        gt_mask = ((scene.labels[pix_r, pix_c] == pi) & seeds.valid).astype(float)
        pts = np.where(seeds.valid[:, None], seeds.points, 0.0)

        kp = part.acf.keypoint
        e1, e2 = part.endpoints
        feet, labels = scatter_targets(pts, part.endpoints)
        targets = [np.broadcast_to(kp, (m, 3)), np.broadcast_to(e1, (m, 3)),
                   np.broadcast_to(e2, (m, 3)), feet]
        centers = [kp, e1, e2, kp]
        noisy = []
        for tgt, center in zip(targets, centers):
            z = rng.standard_normal((m, 3))
            out = rng.random(m) < noise.outlier_fraction
            box = center + (rng.random((m, 3)) - 0.5) * noise.outlier_box
            voter = np.where(out[:, None], box, tgt + noise.offset_sigma * z)
            noisy.append(np.where(seeds.valid[:, None], voter - pts, 0.0))
        kp_off, ep1_off, ep2_off, sc_off = noisy

        length = np.linalg.norm(e2 - e1)
        z = rng.standard_normal((m, 3))
        vec = part.acf.axis + (noise.offset_sigma / length) * z
        vec /= np.linalg.norm(vec, axis=1, keepdims=True)
        out = rng.random(m) < noise.outlier_fraction
        vec = np.where(out[:, None], _random_units(rng, m), vec)

        flips = rng.random(m) < noise.mask_flip_prob
        mask = np.where(flips, 1.0 - gt_mask, gt_mask)

        paf_vectors = paf_target = None
        if pi in partner:
            uv_s = K.project(kp)
            uv_t = K.project(scene.parts[partner[pi]].acf.keypoint)
            dvec = uv_t - uv_s
            if np.linalg.norm(dvec) > 1e-6:
                paf_target = dvec / np.linalg.norm(dvec)
                angles = np.radians(noise.paf_angle_sigma) * rng.standard_normal(m)
                paf_vectors = _rotate2d(np.broadcast_to(paf_target, (m, 2)), angles)

        rois.append(RoiPrediction(
            part_index=pi, object_index=part.object_index, part_class=part.part_class,
            roi=roi, seeds=seeds, mask=mask, gt_mask=gt_mask,
            keypoint_offsets=kp_off, endpoint_offsets=np.stack([ep1_off, ep2_off], axis=1),
            vectors=vec, scatter_offsets=sc_off,
            label_logits=np.where(labels > 0, LABEL_LOGIT, -LABEL_LOGIT),
            paf_vectors=paf_vectors, paf_target=paf_target,
            score=float(np.mean(mask >= 0.5)), truth=part,
        ))
    return PredictionBundle(scene.spec.scene_id, scene.spec.camera, np.asarray(scene.spec.gravity),
                            grid_n, noise, rng_seed, rois)


# ---------------------------------------------------------------------------
# brute-force oracles

def brute_force_kde_argmax(voters, bandwidth: float, grid_pitch: float) -> np.ndarray:
    """Grid cell center maximizing the Gaussian KDE of the voters.

    The grid covers the voter bounding box padded by two bandwidths. The
    kernel factorizes per axis, which turns the full grid evaluation into
    one matrix product per x slice.
    """
    V = np.atleast_2d(np.asarray(voters, dtype=float))
    lo = V.min(axis=0) - 2 * bandwidth
    hi = V.max(axis=0) + 2 * bandwidth
    axes = [np.arange(lo[k], hi[k] + grid_pitch / 2, grid_pitch) for k in range(3)]
    g = [np.exp(-0.5 * ((ax[:, None] - V[None, :, k]) / bandwidth) ** 2) for k, ax in enumerate(axes)]
    gx, gy, gz = g
    best_val, best_idx = -np.inf, None
    for i in range(len(axes[0])):
        dens = (gy * gx[i]) @ gz.T  # (ny, nz)
        j = int(np.argmax(dens))
        if dens.flat[j] > best_val:
            best_val = dens.flat[j]
            best_idx = (i,) + np.unravel_index(j, dens.shape)
    return np.array([axes[k][best_idx[k]] for k in range(3)])


def brute_force_assignment(scores) -> tuple[float, list[tuple[int, int]]]:
    """Exhaustive one-to-one matching maximizing the total score.

    ``scores`` is a (sources, targets) array with NaN for ineligible pairs.
    Returns (total, pairs); the first optimum in enumeration order wins.
    """
    S = np.asarray(scores, dtype=float)
    if S.size == 0:
        return 0.0, []
    ns, nt = S.shape
    if ns > 8 or nt > 8:
        raise ValueError("brute force assignment is limited to 8 candidates per side")
    best = [-np.inf, []]

    def recurse(i, used, total, pairs):
        if i == ns:
            if total > best[0]:
                best[0], best[1] = total, list(pairs)
            return
        recurse(i + 1, used, total, pairs)
        for j in range(nt):
            if j not in used and not np.isnan(S[i, j]):
                pairs.append((i, j))
                recurse(i + 1, used | {j}, total + S[i, j], pairs)
                pairs.pop()

    recurse(0, frozenset(), 0.0, [])
    return float(best[0]), best[1]

