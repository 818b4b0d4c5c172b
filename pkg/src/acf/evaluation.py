"""Axis/keypoint error metrics and average precision over joint thresholds.

AP uses all-point interpolation: the area under the monotone precision
envelope of the precision/recall curve. Values are reported in percent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import PartClass, PartInstance
from .errors import ZeroVector

TABLE_THRESHOLDS = ((10.0, 0.02), (15.0, 0.02), (10.0, 0.05), (15.0, 0.05))
CURVE_COLUMNS = ("threshold_deg", "threshold_cm", "part_class", "AP")


@dataclass(frozen=True)
class ErrorPair:
    angular: float
    translational: float


@dataclass(frozen=True)
class ThresholdSpec:
    max_angle: float
    max_translation: float

    def __post_init__(self):
        if self.max_angle <= 0 or self.max_translation <= 0:
            raise ValueError("thresholds must be positive")

    @property
    def label(self) -> str:
        return f"{self.max_angle:g}deg|{self.max_translation * 100:g}cm"


@dataclass
class EvalReport:
    spec: ThresholdSpec
    ap: dict = field(default_factory=dict)  # PartClass -> AP in [0, 100]
    curves: dict = field(default_factory=dict)  # PartClass -> (recall, precision)
    interpolation: str = "all-point"

    @property
    def mean_ap(self) -> float:
        return float(np.mean(list(self.ap.values()))) if self.ap else 0.0

    def to_dict(self) -> dict:
        return {
            "threshold_deg": self.spec.max_angle,
            "threshold_m": self.spec.max_translation,
            "interpolation": self.interpolation,
            "ap": {c.value: v for c, v in self.ap.items()},
            "mean_ap": self.mean_ap,
        }


def angular_error(n1, n2) -> float:
    """Angle in degrees between two directions."""
    a = np.asarray(n1, dtype=float)
    b = np.asarray(n2, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-9 or nb < 1e-9:
        raise ZeroVector("cannot measure the angle of a zero vector")
    c = float(np.clip((a / na) @ (b / nb), -1.0, 1.0))
    return float(np.degrees(np.arccos(c)))


def translation_error(k1, k2) -> float:
    return float(np.linalg.norm(np.asarray(k1, dtype=float) - np.asarray(k2, dtype=float)))


def pose_errors(pred: PartInstance, gt: PartInstance) -> ErrorPair:
    # A part frame is only a point and a direction, so rotationally
    # symmetric parts need no roll handling.
    return ErrorPair(angular_error(pred.acf.axis, gt.acf.axis),
                     translation_error(pred.acf.keypoint, gt.acf.keypoint))


def average_precision(tp: Sequence[bool], n_gt: int) -> tuple[float, np.ndarray, np.ndarray]:
    """All-point interpolated AP (fraction) for detections already sorted by score."""
    tp = np.asarray(tp, dtype=float)
    if n_gt == 0:
        raise ValueError("AP is undefined without ground truth")
    if len(tp) == 0:
        return 0.0, np.zeros(0), np.zeros(0)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    ap = float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))
    return ap, recall, precision


def _pair_scenes(predictions, ground_truth):
    preds, gts = list(predictions), list(ground_truth)
    if any(isinstance(x, PartInstance) for x in preds + gts):
        return [preds], [gts]
    if not preds:
        preds = [[] for _ in gts]
    if len(preds) != len(gts):
        raise ValueError("predictions and ground truth cover different scene counts")
    return [list(s) for s in preds], [list(s) for s in gts]


def match_and_score(predictions, ground_truth, spec: ThresholdSpec) -> EvalReport:
    """Greedy confidence-ordered matching, then per-class AP.

    ``predictions`` and ``ground_truth`` are either flat lists of part
    instances for one scene or parallel lists of per-scene lists. A
    prediction is a true positive when an unmatched ground truth of the same
    class in the same scene is within both thresholds; among several, the
    one with the smallest keypoint error is taken.
    """
    preds, gts = _pair_scenes(predictions, ground_truth)

    report = EvalReport(spec=spec)
    classes = sorted({g.part_class for s in gts for g in s}, key=lambda c: list(PartClass).index(c))
    for cls in classes:
        dets = [(p.score, si, p) for si, s in enumerate(preds) for p in s if p.part_class == cls]
        # stable sort: ties keep scene/list order
        dets.sort(key=lambda d: -d[0])
        used = [set() for _ in gts]
        tp = []
        for _, si, p in dets:
            best, best_t = None, np.inf
            for gi, g in enumerate(gts[si]):
                if g.part_class != cls or gi in used[si]:
                    continue
                e = pose_errors(p, g)
                if e.angular <= spec.max_angle and e.translational <= spec.max_translation:
                    if e.translational < best_t:
                        best, best_t = gi, e.translational
            if best is not None:
                used[si].add(best)
            tp.append(best is not None)
        n_gt = sum(1 for s in gts for g in s if g.part_class == cls)
        ap, rec, prec = average_precision(tp, n_gt)
        report.ap[cls] = 100.0 * ap
        report.curves[cls] = (rec, prec)
    return report


def map_curve(predictions, ground_truth, angle_range, translation_fixed: float) -> list[tuple]:
    """Sweep the angle threshold at a fixed translation threshold.

    Rows are (threshold_deg, threshold_cm, part_class, AP); a ``mean`` row
    follows the per-class rows of each threshold.
    """
    rows = []
    for a in angle_range:
        rep = match_and_score(predictions, ground_truth, ThresholdSpec(float(a), translation_fixed))
        rows.extend(_report_rows(rep))
    return rows


def map_curve_translation(predictions, ground_truth, translation_range, angle_fixed: float) -> list[tuple]:
    rows = []
    for t in translation_range:
        rep = match_and_score(predictions, ground_truth, ThresholdSpec(angle_fixed, float(t)))
        rows.extend(_report_rows(rep))
    return rows


def _report_rows(rep: EvalReport) -> list[tuple]:
    deg, cm = rep.spec.max_angle, rep.spec.max_translation * 100.0
    rows = [(deg, cm, c.value, v) for c, v in rep.ap.items()]
    rows.append((deg, cm, "mean", rep.mean_ap))
    return rows


def write_curve_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for deg, cm, cls, ap in rows:
            w.writerow([f"{deg:g}", f"{cm:g}", cls, f"{ap:.6f}"])
