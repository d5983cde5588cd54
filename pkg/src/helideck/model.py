"""Shared domain types: deck-frame poses, the keypoint skeleton, angle math."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi

# Canonical keypoint vocabulary, in skeleton order. Feature vectors, dataset
# records and correspondence lookups all index keypoints by this order.
KEYPOINT_NAMES = (
    "nose",
    "cockpit_center",
    "rotor_hub",
    "rotor_tip_fore",
    "rotor_tip_aft",
    "rotor_tip_left",
    "rotor_tip_right",
    "tail_rotor_hub",
    "tail_fin_top",
    "tail_boom_mid",
    "left_main_gear",
    "right_main_gear",
    "tail_gear",
    "left_sponson",
    "right_sponson",
    "engine_housing_fore",
    "engine_housing_aft",
    "left_stabilator",
    "right_stabilator",
)


def wrap_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi). Exact identity on already-wrapped input."""
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    wrapped = theta - TWO_PI * math.floor((theta + math.pi) / TWO_PI)
    # rounding can land exactly on +pi (or just under -pi) near the seam
    if wrapped >= math.pi:
        wrapped -= TWO_PI
    elif wrapped < -math.pi:
        wrapped += TWO_PI
    return wrapped


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorized :func:`wrap_angle` over an array of radians."""
    theta = np.asarray(theta, dtype=float)
    wrapped = theta - TWO_PI * np.floor((theta + math.pi) / TWO_PI)
    wrapped = np.where(wrapped >= math.pi, wrapped - TWO_PI, wrapped)
    wrapped = np.where(wrapped < -math.pi, wrapped + TWO_PI, wrapped)
    return wrapped


def rotation_zyx(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation matrix for intrinsic Z-Y-X Euler angles: Rz(yaw)Ry(pitch)Rx(roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, -sy * cr + cy * sp * sr, sy * sr + cy * sp * cr],
            [sy * cp, cy * cr + sy * sp * sr, -cy * sr + sy * sp * cr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def euler_zyx_from_rotation(rot: np.ndarray) -> tuple[float, float, float]:
    """Extract (roll, pitch, yaw) from a rotation matrix, Z-Y-X convention.

    Raises ValueError at the gimbal singularity |pitch| ~ pi/2, where yaw and
    roll are no longer separable.
    """
    rot = np.asarray(rot, dtype=float)
    s = -rot[2, 0]
    if abs(s) >= 1.0 - 1e-9:
        raise ValueError("gimbal-degenerate rotation: |pitch| at pi/2")
    pitch = math.asin(max(-1.0, min(1.0, s)))
    yaw = math.atan2(rot[1, 0], rot[0, 0])
    roll = math.atan2(rot[2, 1], rot[2, 2])
    return roll, pitch, yaw


@dataclass(frozen=True)
class HeliPose:
    """6-DoF helicopter pose in the deck frame.

    x athwartships, y fore-aft, z height above deck (meters); roll/pitch/yaw
    intrinsic Z-Y-X Euler angles (radians), wrapped to [-pi, pi) at
    construction. Gimbal-degenerate poses (|pitch| >= pi/2) are rejected.
    """

    x: float
    y: float
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "roll", "pitch", "yaw"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"pose field {name} must be finite, got {value!r}")
        object.__setattr__(self, "roll", wrap_angle(self.roll))
        object.__setattr__(self, "pitch", wrap_angle(self.pitch))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))
        if abs(self.pitch) >= math.pi / 2:
            raise ValueError(f"gimbal-degenerate pose: |pitch| = {abs(self.pitch)} >= pi/2")

    def rotation(self) -> np.ndarray:
        """Body-to-deck rotation matrix."""
        return rotation_zyx(self.roll, self.pitch, self.yaw)

    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @classmethod
    def from_rt(cls, rotation: np.ndarray, translation: np.ndarray) -> "HeliPose":
        """Build a pose from a body-to-deck rotation matrix and translation."""
        roll, pitch, yaw = euler_zyx_from_rotation(rotation)
        t = np.asarray(translation, dtype=float)
        return cls(x=t[0], y=t[1], z=t[2], roll=roll, pitch=pitch, yaw=yaw)


@dataclass(frozen=True)
class SkeletonKeypoint:
    name: str
    p_model: np.ndarray  # (3,) meters, body frame


@dataclass(frozen=True)
class Skeleton:
    """19 named keypoints with fixed body-frame 3D coordinates."""

    keypoints: tuple[SkeletonKeypoint, ...]

    def __post_init__(self):
        if len(self.keypoints) != 19:
            raise ValueError(f"skeleton must have exactly 19 keypoints, got {len(self.keypoints)}")
        names = [kp.name for kp in self.keypoints]
        if len(set(names)) != len(names):
            raise ValueError("skeleton keypoint names must be unique")
        pts = self.points()
        if not np.all(np.isfinite(pts)):
            raise ValueError("skeleton coordinates must be finite")
        centered = pts - pts.mean(axis=0)
        sv = np.linalg.svd(centered, compute_uv=False)
        if sv[2] < 1e-6 * sv[0]:
            raise ValueError("skeleton keypoints are (near-)coplanar; PnP would be unstable")

    def names(self) -> tuple[str, ...]:
        return tuple(kp.name for kp in self.keypoints)

    def points(self) -> np.ndarray:
        """(19, 3) body-frame coordinates in skeleton order."""
        return np.array([kp.p_model for kp in self.keypoints])

    def index_of(self, name: str) -> int:
        for i, kp in enumerate(self.keypoints):
            if kp.name == name:
                return i
        raise KeyError(name)


@dataclass(frozen=True)
class KeypointObservation:
    """A single detected keypoint in image space."""

    name: str
    u: float
    v: float
    visible: bool

    def __post_init__(self):
        if self.visible and not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError(f"visible keypoint {self.name} has non-finite pixels")


@dataclass(frozen=True)
class DLASpec:
    """Designated Landing Area tolerance box in the deck frame.

    Rectangular tolerance around ``center`` plus a yaw tolerance around
    ``yaw_ref`` (nose-forward over the securing device by default).
    """

    center: tuple[float, float] = (0.0, 0.0)
    tol_x: float = 0.1524
    tol_y: float = 0.1524
    tol_yaw: float = 0.5
    yaw_ref: float = 0.0

    def __post_init__(self):
        if not (self.tol_x > 0 and self.tol_y > 0 and self.tol_yaw > 0):
            raise ValueError("DLA tolerances must be positive")

    def contains(self, x: float, y: float, yaw: float) -> bool:
        return (
            abs(x - self.center[0]) <= self.tol_x
            and abs(y - self.center[1]) <= self.tol_y
            and abs(wrap_angle(yaw - self.yaw_ref)) <= self.tol_yaw
        )


@dataclass(frozen=True)
class PoseError:
    """Per-axis absolute pose error: meters in x/y, wrapped radians in yaw."""

    dx: float
    dy: float
    dyaw: float

    def __post_init__(self):
        if self.dx < 0 or self.dy < 0 or self.dyaw < 0:
            raise ValueError("pose errors are non-negative")
        if self.dyaw > math.pi:
            raise ValueError("dyaw cannot exceed pi after wrapping")


def pose_error(nominal: HeliPose, estimated: HeliPose) -> PoseError:
    """Per-axis error between a nominal and an estimated pose."""
    return PoseError(
        dx=abs(nominal.x - estimated.x),
        dy=abs(nominal.y - estimated.y),
        dyaw=abs(wrap_angle(nominal.yaw - estimated.yaw)),
    )


def load_skeleton(path: str | Path) -> Skeleton:
    """Load a skeleton model file (versioned JSON, meters, body frame)."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    return _skeleton_from_doc(doc, source=str(path))


def default_skeleton() -> Skeleton:
    """The canonical 19-keypoint skeleton bundled with the package."""
    ref = resources.files("helideck.data").joinpath("skeleton.json")
    doc = json.loads(ref.read_text(encoding="utf-8"))
    return _skeleton_from_doc(doc, source="bundled skeleton.json")


def _skeleton_from_doc(doc: dict, source: str) -> Skeleton:
    try:
        version = doc["version"]
        entries = doc["keypoints"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"invalid skeleton file {source}: missing {exc}") from exc
    if version != 1:
        raise ValueError(f"unsupported skeleton file version {version!r} in {source}")
    keypoints = tuple(
        SkeletonKeypoint(name=e["name"], p_model=np.array([e["x"], e["y"], e["z"]], dtype=float))
        for e in entries
    )
    return Skeleton(keypoints=keypoints)
