"""Pinhole projection and pose recovery from 2D-3D correspondences.

The solver is the O(n) control-point formulation: model points are expressed
in barycentric coordinates of 4 control points (centroid + principal
directions), the projection constraints give a 2n x 12 homogeneous system
whose near-nullspace holds the camera-frame control points up to a linear
combination, and the combination weights (betas) are fixed by inter-control-
point distance constraints. Candidates for nullspace dimension N = 1, 2, 3
are solved, refined, and the one with least reprojection RMS wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from .model import HeliPose, euler_zyx_from_rotation

EPS_Z = 1e-6  # meters; depths at or below this count as behind the camera

_CP_PAIRS = tuple(combinations(range(4), 2))


class GeometryError(ValueError):
    """Base class for solver input/degeneracy errors."""


class InsufficientPointsError(GeometryError):
    """Fewer correspondences than the solver needs."""


class PlanarModelError(GeometryError):
    """Model points are (near-)coplanar; the spatial solver would be unstable."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; pixels, principal point inside the image."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraExtrinsics:
    """Deck-frame to camera-frame transform: p_cam = rotation @ p_deck + translation."""

    rotation: np.ndarray  # (3, 3), orthonormal, det +1
    translation: np.ndarray  # (3,), meters

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-9 or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("extrinsic rotation must be orthonormal with det +1")
        # the deck must be observable: origin in front, camera above the plane
        if t[2] <= EPS_Z:
            raise ValueError("deck origin is not in front of the camera")
        if self.camera_position()[2] <= 0.0:
            raise ValueError("camera must sit above the deck plane")

    def camera_position(self) -> np.ndarray:
        """Camera center expressed in the deck frame."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Correspondence:
    """A model-space point paired with its observed pixel coordinates."""

    p_model: np.ndarray  # (3,) meters
    uv: np.ndarray  # (2,) pixels

    def __post_init__(self):
        p = np.asarray(self.p_model, dtype=float).reshape(3)
        uv = np.asarray(self.uv, dtype=float).reshape(2)
        object.__setattr__(self, "p_model", p)
        object.__setattr__(self, "uv", uv)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(uv))):
            raise ValueError("correspondence values must be finite")


@dataclass(frozen=True)
class PnPSolution:
    """Object pose in the camera frame plus its reprojection RMS."""

    rotation: np.ndarray  # (3, 3) object->camera
    translation: np.ndarray  # (3,)
    reproj_rms: float
    converged: bool = True

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))


def project_point(
    p_world: np.ndarray,
    intr: CameraIntrinsics,
    extr: CameraExtrinsics,
    eps_z: float = EPS_Z,
) -> tuple[float, float] | None:
    """Project a deck-frame point; None when it falls behind the camera."""
    p_cam = extr.rotation @ np.asarray(p_world, dtype=float) + extr.translation
    if p_cam[2] <= eps_z:
        return None
    u = intr.fx * p_cam[0] / p_cam[2] + intr.cx
    v = intr.fy * p_cam[1] / p_cam[2] + intr.cy
    return (float(u), float(v))


def project_points(
    pts_world: np.ndarray,
    intr: CameraIntrinsics,
    extr: CameraExtrinsics,
    eps_z: float = EPS_Z,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection: (n,2) pixels and an (n,) in-front mask."""
    pts = np.asarray(pts_world, dtype=float).reshape(-1, 3)
    p_cam = pts @ extr.rotation.T + extr.translation
    in_front = p_cam[:, 2] > eps_z
    z = np.where(in_front, p_cam[:, 2], 1.0)
    uv = np.empty((len(pts), 2))
    uv[:, 0] = intr.fx * p_cam[:, 0] / z + intr.cx
    uv[:, 1] = intr.fy * p_cam[:, 1] / z + intr.cy
    uv[~in_front] = np.nan
    return uv, in_front


def _project_rt(rot: np.ndarray, t: np.ndarray, pts: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Unguarded pinhole projection of model points under (rot, t)."""
    p_cam = pts @ rot.T + t
    uv = np.empty((len(pts), 2))
    uv[:, 0] = intr.fx * p_cam[:, 0] / p_cam[:, 2] + intr.cx
    uv[:, 1] = intr.fy * p_cam[:, 1] / p_cam[:, 2] + intr.cy
    return uv


def reprojection_error(sol: PnPSolution, corrs: list[Correspondence], intr: CameraIntrinsics) -> float:
    """Root-mean-square pixel residual of a solution over correspondences."""
    if not corrs:
        raise InsufficientPointsError("reprojection error needs at least one correspondence")
    pts = np.array([c.p_model for c in corrs])
    uv_obs = np.array([c.uv for c in corrs])
    return _rms(_project_rt(sol.rotation, sol.translation, pts, intr) - uv_obs)


def _rms(residuals: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))


def _procrustes_rt(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid alignment dst ~ R @ src + t (least squares, no scale)."""
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (dst - c_dst).T @ (src - c_src)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    return rot, c_dst - rot @ c_src


def _control_points(pts: np.ndarray) -> np.ndarray:
    """Centroid plus principal-direction control points of the model cloud."""
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    scales = s / math.sqrt(len(pts))
    return np.vstack([centroid, centroid + scales[:, None] * vt])


def _barycentric(pts: np.ndarray, ctrl: np.ndarray) -> np.ndarray:
    """(n, 4) weights a with pts = a @ ctrl and rows summing to 1."""
    system = np.vstack([ctrl.T, np.ones(4)])
    rhs = np.vstack([pts.T, np.ones(len(pts))])
    return np.linalg.solve(system, rhs).T


def _measurement_matrix(alphas: np.ndarray, uv: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """2n x 12 homogeneous system from the projection constraints."""
    n = len(uv)
    m = np.zeros((2 * n, 12))
    for j in range(4):
        a = alphas[:, j]
        m[0::2, 3 * j] = a * intr.fx
        m[0::2, 3 * j + 2] = a * (intr.cx - uv[:, 0])
        m[1::2, 3 * j + 1] = a * intr.fy
        m[1::2, 3 * j + 2] = a * (intr.cy - uv[:, 1])
    return m


def _cp_pair_diffs(v: np.ndarray) -> np.ndarray:
    """For nullspace basis v (12, k): (6, k, 3) control-point differences."""
    cps = v.T.reshape(-1, 4, 3)  # (k, 4, 3)
    return np.stack([cps[:, i] - cps[:, j] for i, j in _CP_PAIRS], axis=0)


def _betas_n1(diffs: np.ndarray, rho: np.ndarray) -> np.ndarray:
    d = diffs[:, 0, :]  # (6, 3)
    dist_c = np.linalg.norm(d, axis=1)
    dist_w = np.sqrt(rho)
    return np.array([float(dist_c @ dist_w / (dist_c @ dist_c))])


def _betas_n2(diffs: np.ndarray, rho: np.ndarray) -> np.ndarray:
    # unknowns [b11, b12, b22] from ||b1 d1 + b2 d2||^2 = rho
    d1, d2 = diffs[:, 0, :], diffs[:, 1, :]
    ell = np.column_stack(
        [np.sum(d1 * d1, axis=1), 2 * np.sum(d1 * d2, axis=1), np.sum(d2 * d2, axis=1)]
    )
    b, *_ = np.linalg.lstsq(ell, rho, rcond=None)
    beta1 = math.sqrt(abs(b[0]))
    beta2 = math.copysign(math.sqrt(abs(b[2])), b[1] * (1.0 if b[0] >= 0 else -1.0))
    return np.array([beta1, beta2])


def _betas_n3(diffs: np.ndarray, rho: np.ndarray) -> np.ndarray:
    # unknowns [b11, b12, b13, b22, b23, b33]
    d1, d2, d3 = diffs[:, 0, :], diffs[:, 1, :], diffs[:, 2, :]
    ell = np.column_stack(
        [
            np.sum(d1 * d1, axis=1),
            2 * np.sum(d1 * d2, axis=1),
            2 * np.sum(d1 * d3, axis=1),
            np.sum(d2 * d2, axis=1),
            2 * np.sum(d2 * d3, axis=1),
            np.sum(d3 * d3, axis=1),
        ]
    )
    b, *_ = np.linalg.lstsq(ell, rho, rcond=None)
    sign1 = 1.0 if b[0] >= 0 else -1.0
    beta1 = math.sqrt(abs(b[0]))
    beta2 = math.copysign(math.sqrt(abs(b[3])), b[1] * sign1)
    beta3 = math.copysign(math.sqrt(abs(b[5])), b[2] * sign1)
    return np.array([beta1, beta2, beta3])


def _refine_betas(diffs: np.ndarray, betas: np.ndarray, rho: np.ndarray, iters: int = 10) -> np.ndarray:
    """Gauss-Newton on the distance constraints ||sum_k beta_k dv_k||^2 = rho."""
    betas = betas.copy()
    k = len(betas)
    d = diffs[:, :k, :]  # (6, k, 3)
    # gram[p] = d_p @ d_p^T so residual_p = beta^T gram[p] beta - rho_p
    gram = np.einsum("pki,pli->pkl", d, d)
    for _ in range(iters):
        gb = gram @ betas  # (6, k)
        residual = gb @ betas - rho
        jac = 2.0 * gb
        jtj = jac.T @ jac
        try:
            step = np.linalg.solve(jtj, -jac.T @ residual)
        except np.linalg.LinAlgError:
            break
        betas = betas + step
        if np.linalg.norm(step) < 1e-14:
            break
    return betas


def _pose_from_betas(
    v: np.ndarray, betas: np.ndarray, alphas: np.ndarray, pts: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    ctrl_cam = (v[:, : len(betas)] @ betas).reshape(4, 3)
    p_cam = alphas @ ctrl_cam
    if np.sum(p_cam[:, 2] < 0) > len(p_cam) / 2:
        p_cam = -p_cam
    return _procrustes_rt(pts, p_cam)


def epnp_solve(corrs: list[Correspondence], intr: CameraIntrinsics) -> PnPSolution:
    """Recover the object pose in the camera frame from >= 6 correspondences.

    Raises InsufficientPointsError below 6 points and PlanarModelError when
    the model points are too close to a plane (the deck-plane homography path
    owns that regime).
    """
    if len(corrs) < 6:
        raise InsufficientPointsError(f"PnP needs >= 6 correspondences, got {len(corrs)}")
    # canonical internal ordering makes the output bit-invariant under relabeling
    corrs = sorted(corrs, key=lambda c: (*c.p_model, *c.uv))
    pts = np.array([c.p_model for c in corrs])
    uv = np.array([c.uv for c in corrs])
    if not np.all(np.isfinite(uv)):
        raise GeometryError("pixel observations must be finite")

    sv_model = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if sv_model[2] < 1e-6 * sv_model[0]:
        raise PlanarModelError("model points are near-coplanar")

    ctrl = _control_points(pts)
    alphas = _barycentric(pts, ctrl)
    m = _measurement_matrix(alphas, uv, intr)

    # right singular vectors of M via the 12x12 normal matrix
    mtm = m.T @ m
    _, _, vt = np.linalg.svd(mtm)
    v = vt[::-1].T  # columns ordered by ascending singular value
    if not np.all(np.isfinite(v)):
        raise GeometryError("nullspace computation failed; system is ill-conditioned")

    rho = np.array([float(np.sum((ctrl[i] - ctrl[j]) ** 2)) for i, j in _CP_PAIRS])
    diffs = _cp_pair_diffs(v[:, :3])

    best: PnPSolution | None = None
    for case_betas in (_betas_n1, _betas_n2, _betas_n3):
        betas = case_betas(diffs, rho)
        betas = _refine_betas(diffs, betas, rho)
        rot, t = _pose_from_betas(v, betas, alphas, pts)
        rms = _rms(_project_rt(rot, t, pts, intr) - uv)
        if best is None or rms < best.reproj_rms - 1e-15:
            best = PnPSolution(rotation=rot, translation=t, reproj_rms=rms)
    return best


def _residual_and_jacobian(
    rot: np.ndarray, t: np.ndarray, pts: np.ndarray, uv: np.ndarray, intr: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked pixel residuals and their Jacobian wrt (axis-angle, translation).

    The local step perturbs the rotation on the left: R <- exp([w]x) R, so
    d p_cam / d w = -[p_cam - t]x and d p_cam / d t = I.
    """
    p_cam = pts @ rot.T + t
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    res = np.empty(2 * len(pts))
    res[0::2] = intr.fx * x / z + intr.cx - uv[:, 0]
    res[1::2] = intr.fy * y / z + intr.cy - uv[:, 1]

    # d(u,v)/d p_cam
    du = np.column_stack([intr.fx / z, np.zeros_like(z), -intr.fx * x / z**2])
    dv = np.column_stack([np.zeros_like(z), intr.fy / z, -intr.fy * y / z**2])
    rp = p_cam - t  # rotated model points
    dpdw = np.zeros((len(pts), 3, 3))
    dpdw[:, 0, 1] = rp[:, 2]
    dpdw[:, 0, 2] = -rp[:, 1]
    dpdw[:, 1, 0] = -rp[:, 2]
    dpdw[:, 1, 2] = rp[:, 0]
    dpdw[:, 2, 0] = rp[:, 1]
    dpdw[:, 2, 1] = -rp[:, 0]

    jac = np.empty((2 * len(pts), 6))
    jac[0::2, :3] = np.einsum("ni,nij->nj", du, dpdw)
    jac[1::2, :3] = np.einsum("ni,nij->nj", dv, dpdw)
    jac[0::2, 3:] = du
    jac[1::2, 3:] = dv
    return res, jac


def _axis_angle_matrix(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        k = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
        return np.eye(3) + k + 0.5 * (k @ k)
    axis = w / theta
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def refine_pose_gn(
    initial: PnPSolution,
    corrs: list[Correspondence],
    intr: CameraIntrinsics,
    max_iters: int = 20,
    tol: float = 1e-12,
) -> PnPSolution:
    """Gauss-Newton refinement of a pose over the reprojection residuals.

    Monotone: a step is only accepted if it lowers the residual (with up to 8
    halvings of the step first). Three consecutive rejected iterations count
    as divergence and return the initial solution flagged unconverged.
    """
    if not corrs:
        raise InsufficientPointsError("refinement needs at least one correspondence")
    pts = np.array([c.p_model for c in corrs])
    uv = np.array([c.uv for c in corrs])

    rot = initial.rotation.copy()
    t = initial.translation.copy()
    res, jac = _residual_and_jacobian(rot, t, pts, uv, intr)
    cost = float(res @ res)
    consecutive_failures = 0

    for _ in range(max_iters):
        jtj = jac.T @ jac
        try:
            step = np.linalg.solve(jtj, -jac.T @ res)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(jac, -res, rcond=None)

        accepted = False
        scale = 1.0
        for _ in range(8):
            w, dt = scale * step[:3], scale * step[3:]
            rot_new = _axis_angle_matrix(w) @ rot
            t_new = t + dt
            p_cam = pts @ rot_new.T + t_new
            if np.all(p_cam[:, 2] > EPS_Z):
                res_new, jac_new = _residual_and_jacobian(rot_new, t_new, pts, uv, intr)
                cost_new = float(res_new @ res_new)
                if cost_new <= cost:
                    rot, t, res, jac, cost = rot_new, t_new, res_new, jac_new, cost_new
                    accepted = True
                    break
            scale *= 0.5

        if accepted:
            consecutive_failures = 0
            if np.linalg.norm(scale * step) < tol:
                break
        else:
            consecutive_failures += 1
            if consecutive_failures >= 3:
                return replace(initial, converged=False)

    rms = math.sqrt(cost / len(corrs))
    if rms > initial.reproj_rms + 1e-12:
        return initial
    return PnPSolution(rotation=rot, translation=t, reproj_rms=rms)


def deck_pose_from_camera(sol: PnPSolution, extr: CameraExtrinsics) -> HeliPose:
    """Compose object-in-camera with camera-in-deck into a deck-frame pose."""
    rot_deck = extr.rotation.T @ sol.rotation
    t_deck = extr.rotation.T @ (sol.translation - extr.translation)
    roll, pitch, yaw = euler_zyx_from_rotation(rot_deck)
    return HeliPose(x=t_deck[0], y=t_deck[1], z=t_deck[2], roll=roll, pitch=pitch, yaw=yaw)


def pose_to_camera(pose: HeliPose, extr: CameraExtrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Object pose in the camera frame for a deck-frame pose (forward model)."""
    rot = extr.rotation @ pose.rotation()
    t = extr.rotation @ pose.translation() + extr.translation
    return rot, t


def rotation_angle(rot_a: np.ndarray, rot_b: np.ndarray) -> float:
    """Geodesic angle between two rotations, radians.

    atan2 over the skew/trace parts stays accurate for tiny angles where the
    acos form bottoms out near sqrt(machine epsilon).
    """
    q = rot_a.T @ rot_b
    skew = 0.5 * np.array([q[2, 1] - q[1, 2], q[0, 2] - q[2, 0], q[1, 0] - q[0, 1]])
    return math.atan2(np.linalg.norm(skew), (np.trace(q) - 1.0) / 2.0)
