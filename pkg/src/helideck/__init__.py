"""Monocular helicopter-over-deck pose estimation and recovery decision aid."""

from .model import (
    DLASpec,
    HeliPose,
    KeypointObservation,
    PoseError,
    Skeleton,
    default_skeleton,
    pose_error,
    wrap_angle,
)
from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    Correspondence,
    PnPSolution,
    deck_pose_from_camera,
    epnp_solve,
    project_point,
    refine_pose_gn,
    reprojection_error,
)
from .calibration import DeckMarking, Homography, decompose_homography, homography_dlt, recalibrate
from .yawnet import (
    Checkpoint,
    YawBinLayout,
    YawEstimate,
    YawNetConfig,
    YawNetParams,
    decode_yaw,
    encode_yaw_targets,
    forward,
    make_bins,
    train,
)
from .simulator import NOISE_PRESETS, ScenarioConfig, SimFrame, gen_dataset, gen_trajectory, simulate_frame
from .tracker import FrameResult, Tracker, TrackerState, cross_validate_yaw, dla_decision
from .service import ScenarioCommand, ServiceConfig, StreamMessage, create_app, serve

__version__ = "0.1.0"
