"""Grouping detected parts into objects with part affinity field directions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .camera import CameraIntrinsics
from .core import ObjectClass, PartClass, PartInstance, compatible_pairs, object_for_parts
from .errors import DegenerateDirection, EmptyMask, PreconditionViolation

DEFAULT_MIN_SCORE = 0.5


@dataclass(frozen=True)
class PafField:
    vectors: np.ndarray  # (n, 2)
    mask: np.ndarray  # (n,)


@dataclass(frozen=True)
class AssociationCandidate:
    source: int
    target: int
    score: float


@dataclass(frozen=True)
class ObjectHypothesis:
    parts: tuple[int, ...]
    object_class: Optional[ObjectClass] = None

    def to_dict(self) -> dict:
        return {
            "parts": list(self.parts),
            "object_class": self.object_class.value if self.object_class else None,
        }


def mean_paf_direction(field: PafField, threshold: float = 0.5) -> np.ndarray:
    v = np.asarray(field.vectors, dtype=float)
    m = np.asarray(field.mask, dtype=float)
    keep = m >= threshold
    if not keep.any() or m[keep].sum() <= 0:
        raise EmptyMask("no affinity vector inside the mask")
    mean = (m[keep, None] * v[keep]).sum(axis=0) / m[keep].sum()
    norm = np.linalg.norm(mean)
    if norm < 1e-9:
        raise DegenerateDirection("affinity vectors cancel out")
    return mean / norm


def score_pair(source: PartInstance, target: PartInstance, source_paf_dir,
               projector: CameraIntrinsics) -> float:
    """Cosine between the source's affinity direction and the image-plane
    direction from the source keypoint to the target keypoint."""
    if (source.part_class, target.part_class) not in compatible_pairs():
        raise PreconditionViolation(
            f"{source.part_class.value} -> {target.part_class.value} is not a compatible pair")
    ps = projector.project(source.acf.keypoint)
    pt = projector.project(target.acf.keypoint)
    d = pt - ps
    norm = np.linalg.norm(d)
    if norm < 1e-6:
        raise DegenerateDirection("source and target keypoints project to the same pixel")
    paf = np.asarray(source_paf_dir, dtype=float)
    paf = paf / np.linalg.norm(paf)
    return float(np.clip(paf @ (d / norm), -1.0, 1.0))


def pair_candidates(parts: Sequence[PartInstance], paf_dirs, projector: CameraIntrinsics,
                    source_class: PartClass, target_class: PartClass,
                    min_score: float = DEFAULT_MIN_SCORE) -> list[AssociationCandidate]:
    out = []
    if (source_class, target_class) not in compatible_pairs():
        return out
    for i, src in enumerate(parts):
        if src.part_class != source_class or paf_dirs[i] is None:
            continue
        for j, tgt in enumerate(parts):
            if tgt.part_class != target_class:
                continue
            try:
                s = score_pair(src, tgt, paf_dirs[i], projector)
            except DegenerateDirection:
                continue
            if s >= min_score:
                out.append(AssociationCandidate(i, j, s))
    return out


def greedy_match(candidates: Sequence[AssociationCandidate]) -> list[AssociationCandidate]:
    """One-to-one matching taking the highest remaining score first."""
    # stable sort keeps the enumeration order for equal scores
    ordered = sorted(candidates, key=lambda c: -c.score)
    used_s, used_t, chosen = set(), set(), []
    for c in ordered:
        if c.source in used_s or c.target in used_t:
            continue
        used_s.add(c.source)
        used_t.add(c.target)
        chosen.append(c)
    return chosen


def assemble_objects(parts: Sequence[PartInstance], paf_dirs, projector: CameraIntrinsics,
                     min_score: float = DEFAULT_MIN_SCORE) -> list[ObjectHypothesis]:
    """Group part instances into object hypotheses.

    ``paf_dirs[i]`` is the mean affinity direction of part ``i`` or ``None``.
    Every compatible (source, target) class pair is matched independently;
    parts left unmatched become single-part hypotheses. Hypotheses are
    ordered by their smallest part index.
    """
    paf_dirs = list(paf_dirs)
    if len(paf_dirs) != len(parts):
        raise ValueError("need one affinity entry per part")
    matched = set()
    groups = []
    for src_cls, tgt_cls in sorted(compatible_pairs(), key=lambda p: (p[0].value, p[1].value)):
        cands = pair_candidates(parts, paf_dirs, projector, src_cls, tgt_cls, min_score)
        for c in greedy_match(cands):
            groups.append(tuple(sorted((c.source, c.target))))
            matched.update((c.source, c.target))
    groups.extend((i,) for i in range(len(parts)) if i not in matched)
    groups.sort(key=min)
    return [
        ObjectHypothesis(g, object_for_parts(parts[i].part_class for i in g))
        for g in groups
    ]
