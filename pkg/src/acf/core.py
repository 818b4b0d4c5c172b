"""Affordance coordinate frames and the object/part/action taxonomy."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

AXIS_TOL = 1e-9


class PartClass(str, enum.Enum):
    CONTAINER = "container"
    HANDLE = "handle"
    STIR = "stir"
    SCOOP = "scoop"


class ObjectClass(str, enum.Enum):
    BOTTLE = "bottle"
    MUG = "mug"
    BOWL = "bowl"
    SPOON = "spoon"
    SPATULA = "spatula"
    HAMMER = "hammer"


class ActionClass(str, enum.Enum):
    GRASP = "grasp"
    STIR = "stir"
    SCOOP = "scoop"
    CONTAIN = "contain"
    POUR = "pour"


_P = PartClass
_O = ObjectClass
_A = ActionClass

OBJECT_PARTS: dict[ObjectClass, frozenset[PartClass]] = {
    _O.BOTTLE: frozenset({_P.CONTAINER}),
    _O.MUG: frozenset({_P.CONTAINER, _P.HANDLE}),
    _O.BOWL: frozenset({_P.CONTAINER}),
    _O.SPOON: frozenset({_P.STIR, _P.SCOOP}),
    _O.SPATULA: frozenset({_P.STIR, _P.SCOOP}),
    _O.HAMMER: frozenset({_P.STIR}),
}

PART_ACTIONS: dict[PartClass, frozenset[ActionClass]] = {
    _P.CONTAINER: frozenset({_A.GRASP, _A.CONTAIN, _A.POUR}),
    _P.HANDLE: frozenset({_A.GRASP}),
    _P.STIR: frozenset({_A.GRASP, _A.STIR, _A.SCOOP}),
    _P.SCOOP: frozenset({_A.SCOOP}),
}

# For each unordered co-occurring pair, the part that carries the affinity
# field pointing at its partner comes first.
_DEPENDENT_FIRST: dict[frozenset[PartClass], tuple[PartClass, PartClass]] = {
    frozenset({_P.HANDLE, _P.CONTAINER}): (_P.HANDLE, _P.CONTAINER),
    frozenset({_P.STIR, _P.SCOOP}): (_P.STIR, _P.SCOOP),
}


def parts_of(obj: ObjectClass) -> frozenset[PartClass]:
    return OBJECT_PARTS[ObjectClass(obj)]


def actions_of(part: PartClass) -> frozenset[ActionClass]:
    return PART_ACTIONS[PartClass(part)]


def compatible_pairs() -> frozenset[tuple[PartClass, PartClass]]:
    """Ordered (source, target) part pairs that can belong to one object.

    Derived from the object table: every object with two or more parts
    contributes its part pairs, oriented so the source is the part whose
    affinity field points at the target.
    """
    pairs = set()
    for parts in OBJECT_PARTS.values():
        if len(parts) < 2:
            continue
        ordered = sorted(parts, key=lambda p: p.value)
        for i, a in enumerate(ordered):
            for b in ordered[i + 1:]:
                pairs.add(_DEPENDENT_FIRST[frozenset({a, b})])
    return frozenset(pairs)


def object_for_parts(parts) -> Optional[ObjectClass]:
    """Return the object class whose part set equals ``parts``, if unique."""
    parts = frozenset(PartClass(p) for p in parts)
    matches = [o for o, row in OBJECT_PARTS.items() if row == parts]
    return matches[0] if len(matches) == 1 else None


def is_partial_object(parts) -> bool:
    """True when ``parts`` is a subset of some object's part set."""
    parts = frozenset(PartClass(p) for p in parts)
    return any(parts <= row for row in OBJECT_PARTS.values())


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Acf:
    """A 3D keypoint with a directed unit axis anchored at it.

    ``axis`` is normalized on construction; a zero or non-finite axis is
    rejected.
    """

    keypoint: np.ndarray
    axis: np.ndarray

    def __post_init__(self):
        kp = np.asarray(self.keypoint, dtype=float).reshape(3)
        ax = np.asarray(self.axis, dtype=float).reshape(3)
        if not np.all(np.isfinite(kp)):
            raise ValueError("keypoint must be finite")
        norm = np.linalg.norm(ax)
        if not np.isfinite(norm) or norm < 1e-12:
            raise ValueError("axis must be a finite nonzero vector")
        object.__setattr__(self, "keypoint", _frozen(kp))
        object.__setattr__(self, "axis", _frozen(ax / norm))

    def transformed(self, rotation, translation=(0.0, 0.0, 0.0)) -> "Acf":
        """Apply the rigid transform x -> R x + t."""
        R = np.asarray(rotation, dtype=float)
        return Acf(R @ self.keypoint + np.asarray(translation, dtype=float), R @ self.axis)

    def to_dict(self) -> dict:
        return {"keypoint": self.keypoint.tolist(), "axis": self.axis.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Acf":
        return cls(d["keypoint"], d["axis"])


@dataclass(frozen=True)
class PartInstance:
    part_class: PartClass
    acf: Acf
    mask_weights: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "part_class", PartClass(self.part_class))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.mask_weights is not None:
            object.__setattr__(self, "mask_weights", _frozen(self.mask_weights))

    def to_dict(self) -> dict:
        d = {"part_class": self.part_class.value, **self.acf.to_dict(), "score": self.score}
        if self.mask_weights is not None:
            d["mask_weights"] = self.mask_weights.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PartInstance":
        return cls(
            PartClass(d["part_class"]),
            Acf(d["keypoint"], d["axis"]),
            d.get("mask_weights"),
            float(d.get("score", 1.0)),
        )
