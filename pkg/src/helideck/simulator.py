"""Synthetic scene generation standing in for the rendered environment.

Samples helicopter poses, projects the skeleton and the deck markings through
the camera, and applies a detector-quality noise model (Gaussian pixel noise
plus dropout). Light levels map onto noise presets. Every frame is a pure
function of (seed, stream, frame_id), so datasets and demo trajectories are
bit-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .calibration import DeckMarking, load_camera, load_marking_map
from .geometry import CameraExtrinsics, CameraIntrinsics, project_points
from .model import HeliPose, KeypointObservation, Skeleton, default_skeleton, rotation_zyx

# (sigma_px, dropout_p) per light level; "clean" is the noise-free oracle mode
NOISE_PRESETS: dict[str, tuple[float, float]] = {
    "clean": (0.0, 0.0),
    "day": (1.0, 0.02),
    "dusk": (2.0, 0.10),
    "night": (4.0, 0.25),
}

STREAM_TRAIN = 0
STREAM_TEST = 1
STREAM_DEMO = 2

DATASET_VERSION = 1

# sea-state perturbation: per-axis (amplitude per sea-state unit, freq Hz, phase)
_SEA_TERMS = {
    "x": (0.025, 0.09, 0.7),
    "y": (0.025, 0.13, 2.1),
    "z": (0.05, 0.16, 4.2),
    "yaw": (0.02, 0.07, 1.3),
    "roll": (0.015, 0.11, 0.4),
    "pitch": (0.01, 0.19, 2.8),
}


@dataclass(frozen=True)
class Waypoint:
    t_frac: float  # fraction of the trajectory duration, 0..1
    x: float
    y: float
    z: float
    yaw: float


# low taxi-in approach: keeps the rotor plane inside the camera's view cone
# for the whole run (the pitched-down camera cannot see high+far points)
DEFAULT_WAYPOINTS = (
    Waypoint(0.00, -1.0, 2.2, 1.05, -0.35),
    Waypoint(0.30, -0.6, 1.4, 1.05, -0.20),
    Waypoint(0.55, -0.25, 0.65, 1.0, -0.10),
    Waypoint(0.75, 0.0, 0.0, 0.98, 0.0),
    Waypoint(0.90, 0.0, 0.0, 0.9, 0.0),
    Waypoint(1.00, 0.0, 0.0, 0.9, 0.0),
)


@dataclass(frozen=True)
class ScenarioConfig:
    """Pose sampling ranges, noise model, scene file refs and timing."""

    x_range: tuple[float, float] = (-3.0, 3.0)
    y_range: tuple[float, float] = (-3.0, 3.0)
    z_range: tuple[float, float] = (0.5, 3.0)
    yaw_range: tuple[float, float] = (-math.pi, math.pi)
    roll_jitter: float = 0.05
    pitch_jitter: float = 0.05
    sigma_px: float = 1.0
    dropout_p: float = 0.02
    camera_path: str | None = None  # None: bundled default camera
    marking_map_path: str | None = None  # None: bundled default map
    seed: int = 0
    frame_rate: float = 10.0
    sea_state: int = 0
    waypoints: tuple[Waypoint, ...] = DEFAULT_WAYPOINTS

    def __post_init__(self):
        for name in ("x_range", "y_range", "z_range", "yaw_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be a non-empty interval, got ({lo}, {hi})")
        if self.sigma_px < 0:
            raise ValueError("sigma_px must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if not 0 <= self.sea_state <= 6:
            raise ValueError("sea_state must lie in 0..6")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")

    def with_preset(self, preset: str) -> "ScenarioConfig":
        sigma, dropout = NOISE_PRESETS[preset]
        return replace(self, sigma_px=sigma, dropout_p=dropout)


def default_camera() -> tuple[CameraIntrinsics, CameraExtrinsics]:
    """The pinned scene camera: 10 m aft of the DLA, 5 m up, pitched down 20 deg."""
    intr = CameraIntrinsics(fx=1400.0, fy=1400.0, cx=640.0, cy=360.0, width=1280, height=720)
    extr = camera_from_placement(position=(0.0, -10.0, 5.0), pitch_down_deg=20.0)
    return intr, extr


def camera_from_placement(
    position: tuple[float, float, float],
    pitch_down_deg: float,
    yaw_deg: float = 0.0,
) -> CameraExtrinsics:
    """Extrinsics for a camera at ``position`` looking along +y, pitched down.

    Camera axes follow the usual convention: x right, y down, z forward.
    """
    p = math.radians(pitch_down_deg)
    yaw = math.radians(yaw_deg)
    rz = rotation_zyx(0.0, 0.0, yaw)
    x_cam = rz @ np.array([1.0, 0.0, 0.0])
    z_cam = rz @ np.array([0.0, math.cos(p), -math.sin(p)])
    y_cam = np.cross(z_cam, x_cam)
    rot = np.vstack([x_cam, y_cam, z_cam])
    t = -rot @ np.asarray(position, dtype=float)
    return CameraExtrinsics(rotation=rot, translation=t)


def perturb_camera(
    extr: CameraExtrinsics,
    droll_deg: float = 0.0,
    dpitch_deg: float = 0.0,
    dyaw_deg: float = 0.0,
    dposition: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> CameraExtrinsics:
    """Rotate the camera about its own axes and/or shift its deck position."""
    delta = rotation_zyx(
        math.radians(dpitch_deg), math.radians(dyaw_deg), math.radians(droll_deg)
    )
    rot = delta @ extr.rotation
    pos = extr.camera_position() + np.asarray(dposition, dtype=float)
    return CameraExtrinsics(rotation=rot, translation=-rot @ pos)


def default_marking_map() -> dict[str, np.ndarray]:
    ref = resources.files("helideck.data").joinpath("markings.json")
    entries = json.loads(ref.read_text(encoding="utf-8"))
    return {str(e["id"]): np.array([float(e["x"]), float(e["y"])]) for e in entries}


def load_scene(
    config: ScenarioConfig,
) -> tuple[CameraIntrinsics, CameraExtrinsics, dict[str, np.ndarray], Skeleton]:
    """Resolve the camera, marking map and skeleton referenced by a config."""
    if config.camera_path is None:
        intr, extr = default_camera()
    else:
        intr, extr = load_camera(config.camera_path)
    markings = (
        default_marking_map()
        if config.marking_map_path is None
        else load_marking_map(config.marking_map_path)
    )
    return intr, extr, markings, default_skeleton()


def frame_rng(seed: int, stream: int, frame_id: int) -> np.random.Generator:
    """Independent generator for one frame of one stream."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream, frame_id)))


@dataclass(frozen=True)
class SimFrame:
    """One synthetic observation frame with its ground truth."""

    frame_id: int
    ground_truth: HeliPose
    observations: tuple[KeypointObservation, ...]
    marking_observations: tuple[DeckMarking, ...]
    bbox: tuple[float, float, float, float] | None  # (u0, v0, u1, v1)


def simulate_frame(
    pose: HeliPose,
    config: ScenarioConfig,
    intr: CameraIntrinsics,
    extr: CameraExtrinsics,
    frame_id: int = 0,
    stream: int = STREAM_DEMO,
    skeleton: Skeleton | None = None,
    marking_map: dict[str, np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
) -> SimFrame:
    """Project, drop, and perturb the keypoints and markings of one frame."""
    skeleton = skeleton or default_skeleton()
    marking_map = default_marking_map() if marking_map is None else marking_map
    if rng is None:
        rng = frame_rng(config.seed, stream, frame_id)

    pts_deck = skeleton.points() @ pose.rotation().T + pose.translation()
    uv, in_front = project_points(pts_deck, intr, extr)

    n = len(uv)
    dropped = rng.random(n) < config.dropout_p
    noise = rng.normal(0.0, 1.0, size=(n, 2)) * config.sigma_px
    noisy = np.where(in_front[:, None], np.nan_to_num(uv) + noise, 0.0)
    inside = (
        in_front
        & (noisy[:, 0] >= 0.0)
        & (noisy[:, 0] < intr.width)
        & (noisy[:, 1] >= 0.0)
        & (noisy[:, 1] < intr.height)
    )
    visible = inside & ~dropped

    observations = tuple(
        KeypointObservation(
            name=name,
            u=float(noisy[i, 0]) if visible[i] else 0.0,
            v=float(noisy[i, 1]) if visible[i] else 0.0,
            visible=bool(visible[i]),
        )
        for i, name in enumerate(skeleton.names())
    )

    bbox = None
    if np.any(visible):
        u0, v0 = noisy[visible].min(axis=0)
        u1, v1 = noisy[visible].max(axis=0)
        pad_u, pad_v = 0.05 * (u1 - u0), 0.05 * (v1 - v0)
        bbox = (
            float(max(u0 - pad_u, 0.0)),
            float(max(v0 - pad_v, 0.0)),
            float(min(u1 + pad_u, intr.width)),
            float(min(v1 + pad_v, intr.height)),
        )

    mids = sorted(marking_map)
    m_deck = np.array([[marking_map[mid][0], marking_map[mid][1], 0.0] for mid in mids])
    m_uv, m_front = project_points(m_deck, intr, extr)
    m_dropped = rng.random(len(mids)) < config.dropout_p
    m_noise = rng.normal(0.0, 1.0, size=(len(mids), 2)) * config.sigma_px
    m_noisy = np.where(m_front[:, None], np.nan_to_num(m_uv) + m_noise, 0.0)
    m_inside = (
        m_front
        & (m_noisy[:, 0] >= 0.0)
        & (m_noisy[:, 0] < intr.width)
        & (m_noisy[:, 1] >= 0.0)
        & (m_noisy[:, 1] < intr.height)
    )
    markings = tuple(
        DeckMarking(id=mid, p_deck=marking_map[mid], uv=m_noisy[i])
        for i, mid in enumerate(mids)
        if m_inside[i] and not m_dropped[i]
    )

    return SimFrame(
        frame_id=frame_id,
        ground_truth=pose,
        observations=observations,
        marking_observations=markings,
        bbox=bbox,
    )


def sample_pose(config: ScenarioConfig, rng: np.random.Generator) -> HeliPose:
    """One i.i.d. pose uniform over the configured ranges."""
    return HeliPose(
        x=rng.uniform(*config.x_range),
        y=rng.uniform(*config.y_range),
        z=rng.uniform(*config.z_range),
        yaw=rng.uniform(*config.yaw_range),
        roll=rng.uniform(-config.roll_jitter, config.roll_jitter),
        pitch=rng.uniform(-config.pitch_jitter, config.pitch_jitter),
    )


def _frame_record(frame: SimFrame, seed: int, stream: int) -> dict:
    gt = frame.ground_truth
    return {
        "frame_id": frame.frame_id,
        "ground_truth": {
            "x": gt.x, "y": gt.y, "z": gt.z, "roll": gt.roll, "pitch": gt.pitch, "yaw": gt.yaw,
        },
        "bbox": None
        if frame.bbox is None
        else {"u0": frame.bbox[0], "v0": frame.bbox[1], "u1": frame.bbox[2], "v1": frame.bbox[3]},
        "keypoints": [
            {"name": o.name, "u": o.u, "v": o.v, "visible": o.visible} for o in frame.observations
        ],
        "markings": [
            {"id": m.id, "u": float(m.uv[0]), "v": float(m.uv[1])} for m in frame.marking_observations
        ],
        "seed_stream": [seed, stream, frame.frame_id],
    }


def _dump_line(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def write_dataset(path: str | Path, frames: list[SimFrame], config: ScenarioConfig, stream: int) -> None:
    header = {
        "version": DATASET_VERSION,
        "kind": "keypoint-dataset",
        "count": len(frames),
        "seed": config.seed,
        "stream": stream,
        "sigma_px": config.sigma_px,
        "dropout_p": config.dropout_p,
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(_dump_line(header))
        for frame in frames:
            f.write(_dump_line(_frame_record(frame, config.seed, stream)))


def gen_dataset(
    config: ScenarioConfig, n_train: int, n_test: int, out_dir: str | Path
) -> tuple[Path, Path]:
    """Write train/test JSON-Lines datasets drawn from disjoint seed streams."""
    if n_train < 1 or n_test < 1:
        raise ValueError("dataset sizes must be >= 1")
    intr, extr, marking_map, skeleton = load_scene(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for stream, count, name in (
        (STREAM_TRAIN, n_train, "train.jsonl"),
        (STREAM_TEST, n_test, "test.jsonl"),
    ):
        frames = []
        for i in range(count):
            rng = frame_rng(config.seed, stream, i)
            pose = sample_pose(config, rng)
            frames.append(
                simulate_frame(pose, config, intr, extr, i, stream, skeleton, marking_map, rng=rng)
            )
        path = out_dir / name
        write_dataset(path, frames, config, stream)
        paths.append(path)
    return paths[0], paths[1]


def load_dataset(path: str | Path) -> list[dict]:
    """All records of a dataset file (header validated and dropped)."""
    records = []
    with open(path, encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("version") != DATASET_VERSION or header.get("kind") != "keypoint-dataset":
            raise ValueError(f"unsupported dataset file {path}")
        for line in f:
            if line.strip():
                records.append(json.loads(line))
    return records


class TrajectoryPlan:
    """Clamped cubic spline through the scenario waypoints plus sea-state sway."""

    def __init__(self, config: ScenarioConfig, duration_s: float):
        if duration_s <= 0:
            raise ValueError("duration must be positive")
        self.duration_s = float(duration_s)
        wps = sorted(config.waypoints, key=lambda w: w.t_frac)
        times = np.array([w.t_frac * duration_s for w in wps])
        if times[0] > 0.0 or times[-1] < duration_s - 1e-9:
            raise ValueError("waypoints must span t_frac 0..1")
        values = np.array([[w.x, w.y, w.z, w.yaw] for w in wps])
        values[:, 3] = np.unwrap(values[:, 3])
        self._spline = CubicSpline(times, values, bc_type="clamped")

    def pose_at(self, t: float, sea_state: int) -> HeliPose:
        x, y, z, yaw = self._spline(min(max(t, 0.0), self.duration_s))
        roll = pitch = 0.0
        if sea_state > 0:
            sway = {
                axis: amp * sea_state * math.sin(2.0 * math.pi * freq * t + phase)
                for axis, (amp, freq, phase) in _SEA_TERMS.items()
            }
            x += sway["x"]
            y += sway["y"]
            z += sway["z"]
            yaw += sway["yaw"]
            roll += sway["roll"]
            pitch += sway["pitch"]
        return HeliPose(x=float(x), y=float(y), z=float(z), roll=roll, pitch=pitch, yaw=float(yaw))


def gen_trajectory(config: ScenarioConfig, duration_s: float) -> list[SimFrame]:
    """Sampled approach-hover-settle trajectory at the configured frame rate."""
    intr, extr, marking_map, skeleton = load_scene(config)
    plan = TrajectoryPlan(config, duration_s)
    n = round(duration_s * config.frame_rate)
    frames = []
    for i in range(n):
        pose = plan.pose_at(i / config.frame_rate, config.sea_state)
        frames.append(
            simulate_frame(pose, config, intr, extr, i, STREAM_DEMO, skeleton, marking_map)
        )
    return frames


def scenario_to_doc(config: ScenarioConfig) -> dict:
    return {
        "x_range": list(config.x_range),
        "y_range": list(config.y_range),
        "z_range": list(config.z_range),
        "yaw_range": list(config.yaw_range),
        "roll_jitter": config.roll_jitter,
        "pitch_jitter": config.pitch_jitter,
        "sigma_px": config.sigma_px,
        "dropout_p": config.dropout_p,
        "camera_path": config.camera_path,
        "marking_map_path": config.marking_map_path,
        "seed": config.seed,
        "frame_rate": config.frame_rate,
        "sea_state": config.sea_state,
        "waypoints": [[w.t_frac, w.x, w.y, w.z, w.yaw] for w in config.waypoints],
    }


def scenario_from_doc(doc: dict) -> ScenarioConfig:
    kwargs = dict(doc)
    for key in ("x_range", "y_range", "z_range", "yaw_range"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    if "waypoints" in kwargs:
        kwargs["waypoints"] = tuple(Waypoint(*w) for w in kwargs["waypoints"])
    return ScenarioConfig(**kwargs)
