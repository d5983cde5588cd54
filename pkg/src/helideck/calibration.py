"""Camera extrinsic recovery from deck paint markings on the z=0 plane.

Deck markings are coplanar, so the extrinsics come from a normalized-DLT
homography between deck-plane coordinates and pixels, decomposed with the
known intrinsics. A refresh is accepted only when the marking reprojection
RMS and the rotation jump from the previous extrinsics stay under gates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    Correspondence,
    GeometryError,
    PnPSolution,
    project_points,
    refine_pose_gn,
    reprojection_error,
    rotation_angle,
)

DEFAULT_RMS_GATE_PX = 2.0
DEFAULT_MAX_ROTATION_JUMP_DEG = 10.0


class CalibrationError(GeometryError):
    """Degenerate or unusable marking configuration."""


@dataclass(frozen=True)
class DeckMarking:
    """A deck paint marking: known deck-plane position and its pixel observation."""

    id: str
    p_deck: np.ndarray  # (2,) meters on z=0
    uv: np.ndarray  # (2,) pixels

    def __post_init__(self):
        p = np.asarray(self.p_deck, dtype=float).reshape(2)
        uv = np.asarray(self.uv, dtype=float).reshape(2)
        object.__setattr__(self, "p_deck", p)
        object.__setattr__(self, "uv", uv)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(uv))):
            raise ValueError(f"marking {self.id} has non-finite coordinates")


@dataclass(frozen=True)
class Homography:
    """Deck-plane (x, y, 1) to pixel (u, v, 1) map, Frobenius-normalized, h33 >= 0."""

    matrix: np.ndarray  # (3, 3)
    algebraic_residual: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float).reshape(3, 3)
        norm = np.linalg.norm(m)
        if norm < 1e-12 or not np.all(np.isfinite(m)):
            raise ValueError("homography matrix is degenerate")
        m = m / norm
        if m[2, 2] < 0 or (m[2, 2] == 0 and m.flat[np.flatnonzero(m)[0]] < 0):
            m = -m
        object.__setattr__(self, "matrix", m)
        if np.linalg.matrix_rank(m, tol=1e-9) < 3:
            raise ValueError("homography must have rank 3")

    def apply(self, xy: np.ndarray) -> np.ndarray:
        """Map (n, 2) deck-plane points to (n, 2) pixels."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        h = self.matrix
        w = xy @ h[2, :2] + h[2, 2]
        u = (xy @ h[0, :2] + h[0, 2]) / w
        v = (xy @ h[1, :2] + h[1, 2]) / w
        return np.column_stack([u, v])


def _normalizing_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin, mean radius to sqrt(2)."""
    centroid = pts.mean(axis=0)
    mean_dist = float(np.mean(np.linalg.norm(pts - centroid, axis=1)))
    if mean_dist < 1e-12:
        raise CalibrationError("degenerate marking configuration: coincident points")
    s = math.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _assert_not_collinear(pts: np.ndarray, label: str) -> None:
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] < 1e-9 * max(sv[0], 1.0):
        raise CalibrationError(f"degenerate marking configuration: {label} points are collinear")


def homography_dlt(markings: list[DeckMarking]) -> Homography:
    """Estimate the deck-to-pixel homography from >= 4 markings (normalized DLT)."""
    if len(markings) < 4:
        raise CalibrationError(f"homography needs >= 4 markings, got {len(markings)}")
    ids = [m.id for m in markings]
    if len(set(ids)) != len(ids):
        raise CalibrationError("marking ids must be unique within a calibration set")
    deck = np.array([m.p_deck for m in markings])
    uv = np.array([m.uv for m in markings])
    _assert_not_collinear(deck, "deck")
    _assert_not_collinear(uv, "pixel")

    t_deck = _normalizing_transform(deck)
    t_uv = _normalizing_transform(uv)
    deck_n = deck @ t_deck[:2, :2].T + t_deck[:2, 2]
    uv_n = uv @ t_uv[:2, :2].T + t_uv[:2, 2]

    n = len(markings)
    a = np.zeros((2 * n, 9))
    x, y = deck_n[:, 0], deck_n[:, 1]
    u, v = uv_n[:, 0], uv_n[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v

    _, s, vt = np.linalg.svd(a)
    if not np.all(np.isfinite(vt)):
        raise CalibrationError("homography system is ill-conditioned")
    h_n = vt[-1].reshape(3, 3)
    residual = float(s[-1]) / math.sqrt(len(a))
    h = np.linalg.inv(t_uv) @ h_n @ t_deck
    return Homography(matrix=h, algebraic_residual=residual)


def homography_from_extrinsics(intr: CameraIntrinsics, extr: CameraExtrinsics) -> Homography:
    """The exact deck-to-pixel homography K [r1 r2 t] implied by a camera."""
    h = intr.matrix() @ np.column_stack(
        [extr.rotation[:, 0], extr.rotation[:, 1], extr.translation]
    )
    return Homography(matrix=h)


def decompose_homography(h: Homography, intr: CameraIntrinsics) -> CameraExtrinsics:
    """Extrinsics from a deck-plane homography with known intrinsics.

    G = K^-1 H gives the first two rotation columns and the translation up to
    a common scale; the scale comes from the unit-norm constraint, the third
    column from the cross product, and the nearest rotation from a polar
    projection. Of the two homography signs, the one with the camera above
    the deck and the deck in front is physical.
    """
    g = np.linalg.solve(intr.matrix(), h.matrix)
    for sign in (1.0, -1.0):
        gs = sign * g
        n1, n2 = np.linalg.norm(gs[:, 0]), np.linalg.norm(gs[:, 1])
        if n1 < 1e-12 or n2 < 1e-12:
            continue
        lam = 2.0 / (n1 + n2)
        r1 = lam * gs[:, 0]
        r2 = lam * gs[:, 1]
        r3 = np.cross(r1, r2)
        t = lam * gs[:, 2]
        rot_raw = np.column_stack([r1, r2, r3])
        u, _, vt = np.linalg.svd(rot_raw)
        rot = u @ np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))]) @ vt
        if t[2] <= 0:
            continue
        cam_pos = -rot.T @ t
        if cam_pos[2] <= 0:
            continue
        return CameraExtrinsics(rotation=rot, translation=t)
    raise CalibrationError("homography has no physically valid decomposition")


def rotation_angle_deg(rot_a: np.ndarray, rot_b: np.ndarray) -> float:
    """Geodesic angle between two rotations, degrees."""
    return math.degrees(rotation_angle(rot_a, rot_b))


@dataclass(frozen=True)
class CalibrationReport:
    accepted: bool
    reproj_rms: float
    rotation_change_deg: float
    translation_change_m: float
    reason: str | None = None


def recalibrate(
    markings: list[DeckMarking],
    intr: CameraIntrinsics,
    previous: CameraExtrinsics,
    rms_gate_px: float = DEFAULT_RMS_GATE_PX,
    max_rotation_jump_deg: float = DEFAULT_MAX_ROTATION_JUMP_DEG,
) -> tuple[CameraExtrinsics, CalibrationReport]:
    """Refresh extrinsics from markings, gated against noise spikes.

    The closed-form decomposition seeds a Gauss-Newton polish over the marking
    reprojection residuals (the plane-as-object pose problem), then the result
    is accepted only when the marking reprojection RMS is under ``rms_gate_px``
    and the rotation moved less than ``max_rotation_jump_deg`` from
    ``previous``; otherwise ``previous`` comes back with the reason.
    """
    h = homography_dlt(markings)
    seed = decompose_homography(h, intr)

    corrs = [Correspondence(p_model=(m.p_deck[0], m.p_deck[1], 0.0), uv=m.uv) for m in markings]
    initial = PnPSolution(rotation=seed.rotation, translation=seed.translation, reproj_rms=math.inf)
    initial = replace(initial, reproj_rms=reprojection_error(initial, corrs, intr))
    refined = refine_pose_gn(initial, corrs, intr)
    try:
        candidate = CameraExtrinsics(rotation=refined.rotation, translation=refined.translation)
    except ValueError as exc:
        report = CalibrationReport(False, math.inf, math.nan, math.nan, f"refined pose unphysical: {exc}")
        return previous, report

    deck3 = np.array([[m.p_deck[0], m.p_deck[1], 0.0] for m in markings])
    uv_obs = np.array([m.uv for m in markings])
    uv_proj, in_front = project_points(deck3, intr, candidate)
    if not np.all(in_front):
        report = CalibrationReport(False, math.inf, math.nan, math.nan, "markings behind candidate camera")
        return previous, report

    rms = float(np.sqrt(np.mean(np.sum((uv_proj - uv_obs) ** 2, axis=1))))
    rot_change = rotation_angle_deg(previous.rotation, candidate.rotation)
    t_change = float(np.linalg.norm(candidate.translation - previous.translation))

    if rms >= rms_gate_px:
        report = CalibrationReport(False, rms, rot_change, t_change, f"reprojection RMS {rms:.2f} px over gate")
        return previous, report
    if rot_change >= max_rotation_jump_deg:
        report = CalibrationReport(False, rms, rot_change, t_change, f"rotation jump {rot_change:.2f} deg over gate")
        return previous, report
    return candidate, CalibrationReport(True, rms, rot_change, t_change)


def load_camera(path: str | Path) -> tuple[CameraIntrinsics, CameraExtrinsics]:
    """Read a camera parameter file (intrinsics + extrinsics JSON)."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    return camera_from_doc(doc)


def camera_from_doc(doc: dict) -> tuple[CameraIntrinsics, CameraExtrinsics]:
    try:
        intr_doc = doc["intrinsics"]
        extr_doc = doc["extrinsics"]
        intr = CameraIntrinsics(
            fx=float(intr_doc["fx"]),
            fy=float(intr_doc["fy"]),
            cx=float(intr_doc["cx"]),
            cy=float(intr_doc["cy"]),
            width=int(intr_doc["width"]),
            height=int(intr_doc["height"]),
        )
        rotation = np.array(extr_doc["rotation"], dtype=float).reshape(3, 3)
        translation = np.array(extr_doc["translation"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"invalid camera parameter document: {exc}") from exc
    return intr, CameraExtrinsics(rotation=rotation, translation=translation)


def camera_to_doc(intr: CameraIntrinsics, extr: CameraExtrinsics) -> dict:
    return {
        "intrinsics": {
            "fx": intr.fx,
            "fy": intr.fy,
            "cx": intr.cx,
            "cy": intr.cy,
            "width": intr.width,
            "height": intr.height,
        },
        "extrinsics": {
            "rotation": [float(x) for x in extr.rotation.reshape(-1)],
            "translation": [float(x) for x in extr.translation],
        },
    }


def save_camera(path: str | Path, intr: CameraIntrinsics, extr: CameraExtrinsics) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(camera_to_doc(intr, extr), f, indent=2, sort_keys=True)
        f.write("\n")


def load_marking_map(path: str | Path) -> dict[str, np.ndarray]:
    """Read a deck marking map file: JSON list of {id, x, y} in meters."""
    with open(path, encoding="utf-8") as f:
        entries = json.load(f)
    marking_map: dict[str, np.ndarray] = {}
    for e in entries:
        mid = str(e["id"])
        if mid in marking_map:
            raise ValueError(f"duplicate marking id {mid!r} in map file")
        marking_map[mid] = np.array([float(e["x"]), float(e["y"])])
    return marking_map
