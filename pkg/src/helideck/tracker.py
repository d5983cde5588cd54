"""Per-frame pipeline: association, PnP solve, smoothing, cross-check, decision.

One tracker instance owns one stream. Raw solver poses are reported; an
alpha-beta filter smooths x/y/yaw for the GREEN/RED call, which is latched
with N-consecutive-frame hysteresis so single-frame noise cannot flicker the
display. The yaw network runs alongside as an independent cross-check and its
disagreement is surfaced, never used as a veto.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

from .calibration import CalibrationReport, DeckMarking, recalibrate
from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    Correspondence,
    GeometryError,
    deck_pose_from_camera,
    epnp_solve,
    refine_pose_gn,
)
from .model import DLASpec, HeliPose, KeypointObservation, Skeleton, wrap_angle
from .simulator import SimFrame
from .yawnet import Checkpoint, YawEstimate, features_from_keypoints

GREEN = "GREEN"
RED = "RED"

DEFAULT_TAU_AGREE = 0.3  # radians; inside the 0.5 rad demonstrated yaw envelope
DEFAULT_HYSTERESIS = 3
MIN_PNP_POINTS = 6


@dataclass(frozen=True)
class AlphaBeta:
    alpha: float = 0.5
    beta: float = 0.1


@dataclass(frozen=True)
class AxisEstimate:
    pos: float
    vel: float


@dataclass(frozen=True)
class TrackerState:
    """Filter, latch and calibration state carried across frames."""

    extrinsics: CameraExtrinsics
    frame_count: int = 0
    latch: str | None = None
    streak: int = 0  # consecutive raw results opposing the latch
    sm_x: AxisEstimate | None = None
    sm_y: AxisEstimate | None = None
    sm_yaw: AxisEstimate | None = None


@dataclass(frozen=True)
class FrameResult:
    """Published per-frame output of the pipeline."""

    frame_id: int
    pose: HeliPose | None
    reproj_rms: float | None
    decision: str
    yaw_agreement: bool
    net_in_distribution: bool
    keypoints_used: tuple[str, ...]
    bbox: tuple[float, float, float, float] | None
    latency_ms: float
    net_yaw: float | None = None
    smoothed_xy_yaw: tuple[float, float, float] | None = None


def smooth_axis(
    est: AxisEstimate | None,
    measured: float,
    dt: float,
    gains: AlphaBeta,
    angular: bool = False,
) -> AxisEstimate:
    """One alpha-beta update; angular axes difference and re-wrap."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if est is None:
        return AxisEstimate(pos=measured, vel=0.0)
    pred = est.pos + est.vel * dt
    if angular:
        pred = wrap_angle(pred)
        residual = wrap_angle(measured - pred)
    else:
        residual = measured - pred
    pos = pred + gains.alpha * residual
    if angular:
        pos = wrap_angle(pos)
    return AxisEstimate(pos=pos, vel=est.vel + gains.beta * residual / dt)


def smooth(
    state: TrackerState, x: float, y: float, yaw: float, dt: float, gains: AlphaBeta = AlphaBeta()
) -> tuple[tuple[float, float, float], TrackerState]:
    """Alpha-beta smooth the planar pose; returns smoothed values and new state."""
    sx = smooth_axis(state.sm_x, x, dt, gains)
    sy = smooth_axis(state.sm_y, y, dt, gains)
    syaw = smooth_axis(state.sm_yaw, yaw, dt, gains, angular=True)
    return (sx.pos, sy.pos, syaw.pos), replace(state, sm_x=sx, sm_y=sy, sm_yaw=syaw)


def update_latch(
    latch: str | None, streak: int, raw: str, n_hysteresis: int = DEFAULT_HYSTERESIS
) -> tuple[str, str, int]:
    """Hysteresis latch: flips only after n consecutive opposing raw results."""
    if latch is None:
        return raw, raw, 0
    if raw == latch:
        return latch, latch, 0
    streak += 1
    if streak >= n_hysteresis:
        return raw, raw, 0
    return latch, latch, streak


def dla_decision(
    pose: HeliPose,
    dla: DLASpec,
    latch: str | None,
    streak: int = 0,
    n_hysteresis: int = DEFAULT_HYSTERESIS,
) -> tuple[str, str, int]:
    """GREEN/RED for a pose against the DLA box, latched with hysteresis.

    Returns (decision, new_latch, new_streak).
    """
    raw = GREEN if dla.contains(pose.x, pose.y, pose.yaw) else RED
    return update_latch(latch, streak, raw, n_hysteresis)


def cross_validate_yaw(
    yaw_pnp: float,
    net_estimate: YawEstimate,
    tau_agree: float = DEFAULT_TAU_AGREE,
    in_distribution: bool = True,
) -> bool:
    """Geometric and network yaws agree within tolerance (and in-distribution)."""
    if not in_distribution:
        return False
    return abs(wrap_angle(yaw_pnp - net_estimate.theta)) < tau_agree


class Tracker:
    """Sequential per-frame orchestrator for one camera stream."""

    def __init__(
        self,
        intr: CameraIntrinsics,
        extr: CameraExtrinsics,
        skeleton: Skeleton,
        checkpoint: Checkpoint | None,
        dla: DLASpec,
        gains: AlphaBeta = AlphaBeta(),
        tau_agree: float = DEFAULT_TAU_AGREE,
        n_hysteresis: int = DEFAULT_HYSTERESIS,
        recalibrate_every: int = 0,
    ):
        self.intr = intr
        self.skeleton = skeleton
        self.checkpoint = checkpoint
        self.dla = dla
        self.gains = gains
        self.tau_agree = tau_agree
        self.n_hysteresis = n_hysteresis
        self.recalibrate_every = recalibrate_every
        self.state = TrackerState(extrinsics=extr)
        self.last_calibration: CalibrationReport | None = None
        self._model_points = {name: skeleton.points()[i] for i, name in enumerate(skeleton.names())}

    def correspondences(self, observations: tuple[KeypointObservation, ...]) -> list[Correspondence]:
        corrs = []
        for obs in observations:
            if not obs.visible or not (math.isfinite(obs.u) and math.isfinite(obs.v)):
                continue
            p = self._model_points.get(obs.name)
            if p is not None:
                corrs.append(Correspondence(p_model=p, uv=(obs.u, obs.v)))
        return corrs

    def _solve(self, corrs: list[Correspondence]) -> tuple[HeliPose | None, float | None]:
        if len(corrs) < MIN_PNP_POINTS:
            return None, None
        try:
            sol = refine_pose_gn(epnp_solve(corrs, self.intr), corrs, self.intr)
            return deck_pose_from_camera(sol, self.state.extrinsics), sol.reproj_rms
        except (GeometryError, ValueError):
            return None, None

    def maybe_recalibrate(self, markings: tuple[DeckMarking, ...]) -> None:
        if len(markings) < 4:
            return
        extr, report = recalibrate(list(markings), self.intr, self.state.extrinsics)
        self.last_calibration = report
        if report.accepted:
            self.state = replace(self.state, extrinsics=extr)

    def process_frame(self, frame: SimFrame, dt: float | None = None) -> FrameResult:
        started = time.perf_counter()
        state = self.state
        if dt is None:
            dt = 0.1

        if self.recalibrate_every > 0 and state.frame_count % self.recalibrate_every == 0:
            self.maybe_recalibrate(frame.marking_observations)
            state = self.state

        corrs = self.correspondences(frame.observations)
        pose, reproj_rms = self._solve(corrs)
        used = tuple(o.name for o in frame.observations if o.visible) if pose is not None else ()

        smoothed = None
        if pose is not None:
            (sx, sy, syaw), state = smooth(state, pose.x, pose.y, pose.yaw, dt, self.gains)
            smoothed = (sx, sy, syaw)

        net_yaw = None
        net_in_dist = False
        agreement = False
        if self.checkpoint is not None and frame.bbox is not None:
            features = features_from_keypoints(list(frame.observations), frame.bbox)
            estimate = self.checkpoint.estimate(features)
            net_yaw = estimate.theta
            net_in_dist = self.checkpoint.in_distribution(estimate.recon_loss)
            if pose is not None:
                agreement = cross_validate_yaw(pose.yaw, estimate, self.tau_agree, net_in_dist)

        if pose is None:
            _, latch, streak = update_latch(state.latch, state.streak, RED, self.n_hysteresis)
            decision = RED  # forced whenever there is no solution
        else:
            decision_pose = HeliPose(x=smoothed[0], y=smoothed[1], z=pose.z, yaw=smoothed[2])
            decision, latch, streak = dla_decision(
                decision_pose, self.dla, state.latch, state.streak, self.n_hysteresis
            )

        self.state = replace(state, latch=latch, streak=streak, frame_count=state.frame_count + 1)
        latency_ms = (time.perf_counter() - started) * 1e3
        return FrameResult(
            frame_id=frame.frame_id,
            pose=pose,
            reproj_rms=reproj_rms,
            decision=decision,
            yaw_agreement=agreement,
            net_in_distribution=net_in_dist,
            keypoints_used=used,
            bbox=frame.bbox,
            latency_ms=latency_ms,
            net_yaw=net_yaw,
            smoothed_xy_yaw=smoothed,
        )
