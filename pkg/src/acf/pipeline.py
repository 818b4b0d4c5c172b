"""End-to-end glue: ROI predictions -> part frames -> objects -> actions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .association import PafField, assemble_objects, mean_paf_direction, DEFAULT_MIN_SCORE
from .camera import CameraIntrinsics
from .core import Acf, ObjectClass, PartClass, PartInstance
from .errors import AcfError
from .estimation import (
    DEFAULT_MASK_THRESHOLD,
    AxisMethod,
    MeanShiftConfig,
    RansacConfig,
    estimate_axis_endpoints,
    estimate_axis_scatterline,
    estimate_axis_vector,
    estimate_keypoint,
)
from .manipulation import (
    WORLD_UP,
    PourParams,
    grasp_bottle,
    grasp_mug,
    grasp_spoon,
    pour_trajectory,
    stir_trajectory,
)
from .synthetic import RoiPrediction


@dataclass(frozen=True)
class EstimatorConfig:
    axis_method: AxisMethod = AxisMethod.ENDPOINTS
    mean_shift: MeanShiftConfig = field(default_factory=MeanShiftConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    mask_threshold: float = DEFAULT_MASK_THRESHOLD


@dataclass(frozen=True)
class EstimatedPart:
    roi_index: int
    part_class: PartClass
    acf: Acf
    score: float
    paf_direction: Optional[np.ndarray] = None

    def instance(self) -> PartInstance:
        return PartInstance(self.part_class, self.acf, score=self.score)

    def to_dict(self) -> dict:
        return {
            "roi": self.roi_index,
            "part_class": self.part_class.value,
            **self.acf.to_dict(),
            "score": self.score,
            "paf_direction": None if self.paf_direction is None else self.paf_direction.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatedPart":
        paf = d.get("paf_direction")
        return cls(int(d["roi"]), PartClass(d["part_class"]), Acf(d["keypoint"], d["axis"]),
                   float(d["score"]), None if paf is None else np.asarray(paf, dtype=float))


def estimate_axis(roi: RoiPrediction, keypoint, config: EstimatorConfig) -> np.ndarray:
    method = AxisMethod(config.axis_method)
    thr = config.mask_threshold
    if method == AxisMethod.ENDPOINTS:
        est = estimate_axis_endpoints(roi.seeds, roi.endpoint_offsets, roi.mask, config.mean_shift, thr)
    elif method == AxisMethod.VECTOR:
        est = estimate_axis_vector(roi.vectors, roi.mask, keypoint, thr, valid=roi.seeds.valid)
    else:
        est = estimate_axis_scatterline(roi.seeds, roi.scatter_offsets, roi.label_logits, roi.mask,
                                        config.ransac, thr, reference=keypoint)
    return est.direction


def estimate_roi(roi: RoiPrediction, index: int, config: EstimatorConfig = EstimatorConfig()) -> EstimatedPart:
    kp = estimate_keypoint(roi.seeds, roi.keypoint_offsets, roi.mask, config.mean_shift, config.mask_threshold)
    axis = estimate_axis(roi, kp, config)
    paf = None
    if roi.paf_vectors is not None:
        try:
            paf = mean_paf_direction(PafField(roi.paf_vectors, roi.mask), config.mask_threshold)
        except AcfError:
            paf = None
    return EstimatedPart(index, roi.part_class, Acf(kp, axis), roi.score, paf)


def estimate_rois(rois, config: EstimatorConfig = EstimatorConfig()):
    """Estimate every ROI; failures are collected instead of raised.

    Returns ``(parts, failures)`` where each failure is a dict with the ROI
    index, part class, error type and message.
    """
    parts, failures = [], []
    for i, roi in enumerate(rois):
        try:
            parts.append(estimate_roi(roi, i, config))
        except AcfError as exc:
            failures.append({"roi": i, "part_class": roi.part_class.value,
                             "error": type(exc).__name__, "message": str(exc)})
    return parts, failures


def associate_parts(parts, intrinsics: CameraIntrinsics, min_score: float = DEFAULT_MIN_SCORE):
    return assemble_objects([p.instance() for p in parts], [p.paf_direction for p in parts],
                            intrinsics, min_score)


@dataclass
class ManipulationPlan:
    grasps: list = field(default_factory=list)
    trajectories: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"grasps": self.grasps, "trajectories": self.trajectories, "skipped": self.skipped}


def plan_manipulation(parts, hypotheses, world_from_camera, pour_params: PourParams = PourParams(),
                      stroke: float = 0.03, steps: int = 10, up=WORLD_UP) -> ManipulationPlan:
    """Compose grasps for every graspable object plus one pour and one stir.

    Part frames are moved into the world frame first. The pour goes from the
    first graspable container to the first other upright container; the stir
    uses the first stir/scoop object in that target container.
    """
    T = np.asarray(world_from_camera, dtype=float)
    world = [p.acf.transformed(T[:3, :3], T[:3, 3]) for p in parts]
    plan = ManipulationPlan()
    containers, spoons = [], []
    for hi, hyp in enumerate(hypotheses):
        by_class = {parts[i].part_class: i for i in hyp.parts}
        entry = {"hypothesis": hi, "parts": list(hyp.parts),
                 "object_class": hyp.object_class.value if hyp.object_class else None}
        try:
            if PartClass.HANDLE in by_class and PartClass.CONTAINER in by_class:
                g = grasp_mug(world[by_class[PartClass.HANDLE]], world[by_class[PartClass.CONTAINER]])
                containers.append(by_class[PartClass.CONTAINER])
            elif PartClass.CONTAINER in by_class:
                containers.append(by_class[PartClass.CONTAINER])
                if hyp.object_class == ObjectClass.BOWL:
                    plan.skipped.append({**entry, "reason": "no grasp rule for bowls"})
                    continue
                g = grasp_bottle(world[by_class[PartClass.CONTAINER]], up=up)
            elif PartClass.STIR in by_class:
                scoop = world[by_class[PartClass.SCOOP]] if PartClass.SCOOP in by_class else None
                if scoop is not None:
                    spoons.append((by_class[PartClass.STIR], by_class[PartClass.SCOOP]))
                g = grasp_spoon(world[by_class[PartClass.STIR]], scoop)
            else:
                plan.skipped.append({**entry, "reason": "no grasp rule for this part set"})
                continue
        except AcfError as exc:
            plan.skipped.append({**entry, "reason": f"{type(exc).__name__}: {exc}"})
            continue
        plan.grasps.append({**entry, **g.to_dict()})

    target = None
    if len(containers) >= 2:
        source = containers[0]
        for c in containers[1:]:
            try:
                traj = pour_trajectory(world[source], world[c], pour_params, up)
            except AcfError as exc:
                plan.skipped.append({"action": "pour", "source": source, "target": c,
                                     "reason": f"{type(exc).__name__}: {exc}"})
                continue
            plan.trajectories.append({"action": "pour", "source": source, "target": c, **traj.to_dict()})
            target = c
            break
    if spoons and (target is not None or containers):
        target = containers[0] if target is None else target
        stir_i, scoop_i = spoons[0]
        try:
            traj = stir_trajectory(world[stir_i], world[scoop_i], world[target], stroke, steps, up=up)
            plan.trajectories.append({"action": "stir", "stir": stir_i, "scoop": scoop_i,
                                      "container": target, **traj.to_dict()})
        except AcfError as exc:
            plan.skipped.append({"action": "stir", "reason": f"{type(exc).__name__}: {exc}"})
    return plan
