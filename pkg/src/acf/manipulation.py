"""Grasp poses and pour/stir waypoints composed from affordance frames.

Gripper frames are 3x3 matrices whose columns are the red, green and blue
gripper axes; red = green x blue so every frame is right-handed. Trajectory
frames describe the held tool: the third column is the tool's axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Acf
from .errors import DegenerateFrame, DivisionByZero, PreconditionViolation

WORLD_UP = np.array([0.0, 0.0, 1.0])
DEFAULT_BASE_POINT = np.array([0.0, -0.6, 0.0])
POUR_SUCCESS_RATIO = 0.7
STIR_TOLERANCE = 0.02


def _unit(v, what: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-9:
        raise DegenerateFrame(f"{what} is degenerate")
    return v / n


@dataclass(frozen=True)
class GraspPose:
    position: np.ndarray
    axes: np.ndarray

    @property
    def red(self):
        return self.axes[:, 0]

    @property
    def green(self):
        return self.axes[:, 1]

    @property
    def blue(self):
        return self.axes[:, 2]

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "axes": self.axes.tolist()}


@dataclass(frozen=True)
class PourParams:
    H: float = 0.15
    R: float = 0.05
    tilt_profile: tuple = tuple(np.linspace(0.0, 120.0, 10))
    steps: int = 10

    def __post_init__(self):
        if self.H <= 0 or self.R < 0 or self.steps < 2:
            raise ValueError("need H > 0, R >= 0 and steps >= 2")


@dataclass
class Trajectory:
    positions: list = field(default_factory=list)
    frames: list = field(default_factory=list)
    phases: list = field(default_factory=list)

    def add(self, position, frame, phase: str):
        self.positions.append(np.asarray(position, dtype=float))
        self.frames.append(np.asarray(frame, dtype=float))
        self.phases.append(phase)

    @property
    def waypoints(self):
        return list(zip(self.positions, self.frames))

    def phase(self, name: str):
        return [(p, f) for p, f, ph in zip(self.positions, self.frames, self.phases) if ph == name]

    def to_dict(self) -> dict:
        return {
            "waypoints": [
                {"position": p.tolist(), "frame": f.tolist(), "phase": ph}
                for p, f, ph in zip(self.positions, self.frames, self.phases)
            ]
        }


def _frame(red, green, blue) -> np.ndarray:
    return np.column_stack([red, green, blue])


def grasp_mug(handle: Acf, container: Acf) -> GraspPose:
    """Grasp at the handle keypoint, green along the container axis.

    Blue is handle.axis x container.axis, flipped only if it clearly points
    toward the container keypoint.
    """
    cos = abs(float(handle.axis @ container.axis))
    if cos > np.cos(np.radians(1.0)):
        raise DegenerateFrame("handle and container axes are parallel")
    blue = _unit(np.cross(handle.axis, container.axis))
    to_container = container.keypoint - handle.keypoint
    dist = np.linalg.norm(to_container)
    if dist > 0 and blue @ to_container > 1e-6 * dist:
        blue = -blue
    green = container.axis
    red = np.cross(green, blue)
    return GraspPose(handle.keypoint.copy(), _frame(red, green, blue))


def _toward_keypoint(keypoint, approach, base_point):
    """Direction the gripper travels: from its approach side toward the keypoint.

    ``approach`` names the side the gripper comes from, as a direction
    pointing away from the keypoint; without it that side is ``base_point``.
    """
    if approach is None:
        return np.asarray(keypoint, dtype=float) - np.asarray(base_point, dtype=float)
    return -np.asarray(approach, dtype=float)


def _side_grasp(position, green, blue0) -> GraspPose:
    # blue0 is a unit approach direction
    red = np.cross(green, blue0)
    if np.linalg.norm(red) < 1e-9:
        raise DegenerateFrame("approach direction is parallel to the grasp axis")
    red = red / np.linalg.norm(red)
    blue = np.cross(red, green)
    return GraspPose(np.asarray(position, dtype=float).copy(), _frame(red, green, blue))


def grasp_bottle(container: Acf, approach=None, base_point=DEFAULT_BASE_POINT, up=WORLD_UP) -> GraspPose:
    """Side grasp at the container keypoint, blue pointing at the keypoint.

    ``approach`` is the side the gripper comes from (a direction away from
    the keypoint), by default the robot base. Only its horizontal part is used.
    """
    up = _unit(up)
    a = _toward_keypoint(container.keypoint, approach, base_point)
    a = _unit(a, "approach direction")
    horiz = _unit(a - (a @ up) * up, "horizontal approach direction")
    return _side_grasp(container.keypoint, container.axis, horiz)


def grasp_spoon(stir: Acf, scoop: Acf | None = None, approach=None, base_point=DEFAULT_BASE_POINT) -> GraspPose:
    """Grasp at the stir keypoint with green along the stir axis and blue toward the keypoint."""
    a = _toward_keypoint(stir.keypoint, approach, base_point)
    return _side_grasp(stir.keypoint, stir.axis, _unit(a, "approach direction"))


def _horizontal_unit(v, up, what):
    h = np.asarray(v, dtype=float) - (np.asarray(v, dtype=float) @ up) * up
    return _unit(h, what)


def _rotation_about(axis, angle) -> np.ndarray:
    k = _unit(axis)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def _pour_geometry(source: Acf, target: Acf, params: PourParams, up):
    up = _unit(up)
    if target.axis @ up < np.cos(np.radians(30.0)):
        raise PreconditionViolation("pour target is tilted more than 30 degrees from upright")
    back = _horizontal_unit(source.keypoint - target.keypoint, up,
                            "horizontal offset between source and target")
    pivot = target.keypoint + params.H * up
    return up, back, pivot


def pour_trajectory(source: Acf, target: Acf, params: PourParams = PourParams(), up=WORLD_UP) -> Trajectory:
    """Transport the held container upright, then tilt it toward the target.

    The pour pivot sits ``H`` above the target keypoint; the pre-pour point
    is ``R`` from it, horizontally on the source's side. During the pour the
    container rotates rigidly about the pivot in the vertical plane through
    both keypoints, so its keypoint stays at radius ``R``. Positive tilt
    swings the container axis toward the target.
    """
    up, back, pivot = _pour_geometry(source, target, params, up)
    toward = -back
    side = np.cross(up, toward)
    upright = np.column_stack([toward, side, up])
    start = source.keypoint
    pre_pour = pivot + params.R * back

    traj = Trajectory()
    for s in np.linspace(0.0, 1.0, params.steps):
        traj.add((1 - s) * start + s * pre_pour, upright, "transport")
    for tilt in params.tilt_profile:
        # rotating about +side carries up toward the target
        rot = _rotation_about(side, np.radians(tilt))
        traj.add(pivot + rot @ (params.R * back), rot @ upright, "pour")
    return traj


def _align_rotation(a, b) -> np.ndarray:
    """Smallest rotation taking unit vector a onto unit vector b."""
    a = _unit(a)
    b = _unit(b)
    v = np.cross(a, b)
    c = float(a @ b)
    s = np.linalg.norm(v)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return _rotation_about(perp, np.pi)
    return _rotation_about(v, np.arctan2(s, c))


def stir_trajectory(stir: Acf, scoop: Acf, container: Acf, stroke: float = 0.03, steps: int = 10,
                    descent: float = 0.15, head_down: bool = True, up=WORLD_UP) -> Trajectory:
    """Lower the spoon into the container, then stir along the scoop axis.

    The spoon is rotated rigidly so its stir axis lies on the container axis
    (pointing down into the container when ``head_down``). Waypoint
    positions are stir-keypoint positions; the final descent waypoint puts
    the scoop keypoint on the container keypoint. The stir stroke follows
    the horizontal projection of the rotated scoop axis.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    up = _unit(up)
    target_dir = -container.axis if head_down else container.axis
    rot = _align_rotation(stir.axis, target_dir)
    stir_axis = target_dir.copy()
    scoop_axis = rot @ scoop.axis
    scoop_rel = rot @ (scoop.keypoint - stir.keypoint)

    stroke_dir = _horizontal_unit(scoop_axis, up, "scoop axis after alignment")
    x = scoop_axis - (scoop_axis @ stir_axis) * stir_axis
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(stir_axis, stroke_dir)
    x = _unit(x)
    frame = np.column_stack([x, np.cross(stir_axis, x), stir_axis])

    bottom = container.keypoint - scoop_rel
    top = bottom + descent * up
    traj = Trajectory()
    for s in np.linspace(0.0, 1.0, steps):
        p = top + s * (bottom - top)
        traj.add(p, frame, "descent")
    # exact end of descent
    traj.positions[-1] = bottom.copy()
    for k in range(steps):
        offset = stroke * np.sin(2 * np.pi * k / (steps - 1))
        traj.add(bottom + offset * stroke_dir, frame, "stir")
    return traj


def pour_success(delta_c1: float, delta_c2: float) -> tuple[float, bool]:
    """Ratio of mass received to mass dispensed; success at r >= 0.7."""
    if delta_c2 == 0:
        raise DivisionByZero("source container mass change is zero")
    r = abs(delta_c1) / abs(delta_c2)
    return r, r >= POUR_SUCCESS_RATIO


def stir_success(positional_error: float) -> bool:
    if positional_error < 0:
        raise ValueError("positional error must be non-negative")
    return positional_error < STIR_TOLERANCE
