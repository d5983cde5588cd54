import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helideck.model import (
    KEYPOINT_NAMES,
    DLASpec,
    HeliPose,
    KeypointObservation,
    PoseError,
    Skeleton,
    SkeletonKeypoint,
    default_skeleton,
    load_skeleton,
    pose_error,
    rotation_zyx,
    wrap_angle,
    wrap_angles,
)

finite_angles = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


def test_wrap_angle_identity_cases():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(2 * math.pi) == pytest.approx(0.0, abs=1e-15)
    assert wrap_angle(3.5 * math.pi) == pytest.approx(-0.5 * math.pi, abs=1e-12)


def test_wrap_angle_range_edges():
    assert wrap_angle(math.pi) == -math.pi
    assert wrap_angle(-math.pi) == -math.pi


def test_wrap_angle_rejects_non_finite():
    for bad in (math.nan, math.inf, -math.inf):
        with pytest.raises(ValueError):
            wrap_angle(bad)


@given(finite_angles)
def test_wrap_angle_idempotent_exact(theta):
    once = wrap_angle(theta)
    assert wrap_angle(once) == once
    assert -math.pi <= once < math.pi


@given(finite_angles)
def test_wrap_angle_congruent_mod_2pi(theta):
    wrapped = wrap_angle(theta)
    k = (theta - wrapped) / (2 * math.pi)
    assert abs(k - round(k)) < 1e-6


def test_wrap_angles_matches_scalar(rng):
    thetas = rng.uniform(-50, 50, 200)
    vec = wrap_angles(thetas)
    for t, w in zip(thetas, vec):
        assert w == wrap_angle(t)


class TestHeliPose:
    def test_angles_stored_wrapped(self):
        pose = HeliPose(x=0, y=0, z=1, yaw=2 * math.pi + 0.25)
        assert pose.yaw == pytest.approx(0.25, abs=1e-12)

    def test_gimbal_rejected(self):
        with pytest.raises(ValueError):
            HeliPose(x=0, y=0, z=0, pitch=math.pi / 2)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            HeliPose(x=math.nan, y=0, z=0)

    @pytest.mark.parametrize("roll,pitch,yaw", [
        (0.0, 0.0, 0.0),
        (0.3, -0.4, 1.2),
        (-1.2, 1.4, -3.0),
        (1.5, -1.5, 3.1),
    ])
    def test_rotation_round_trip(self, roll, pitch, yaw):
        pose = HeliPose(x=1.0, y=-2.0, z=3.0, roll=roll, pitch=pitch, yaw=yaw)
        back = HeliPose.from_rt(pose.rotation(), pose.translation())
        for field in ("x", "y", "z", "roll", "pitch", "yaw"):
            assert getattr(back, field) == pytest.approx(getattr(pose, field), abs=1e-12)

    def test_rotation_is_orthonormal(self, rng):
        for _ in range(20):
            pose = HeliPose(0, 0, 0, roll=rng.uniform(-1.5, 1.5),
                            pitch=rng.uniform(-1.5, 1.5), yaw=rng.uniform(-3, 3))
            r = pose.rotation()
            assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-12
            assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


class TestPoseError:
    def test_identity(self):
        pose = HeliPose(1, 2, 3, yaw=0.5)
        err = pose_error(pose, pose)
        assert (err.dx, err.dy, err.dyaw) == (0.0, 0.0, 0.0)

    def test_wraparound_yaw(self):
        a = HeliPose(0, 0, 0, yaw=3.1)
        b = HeliPose(0, 0, 0, yaw=-3.1)
        err = pose_error(a, b)
        assert err.dyaw == pytest.approx(2 * math.pi - 6.2, abs=1e-12)
        assert err.dx == 0 and err.dy == 0

    def test_six_inch_bound_case(self):
        nominal = HeliPose(0, 0, 0, yaw=0)
        estimated = HeliPose(0.1524, 0, 0, yaw=0)
        err = pose_error(nominal, estimated)
        assert err.dx == pytest.approx(0.1524)
        assert err.dy == 0 and err.dyaw == 0

    @given(finite_angles, finite_angles, st.integers(min_value=-3, max_value=3))
    def test_dyaw_invariant_to_2pi_shifts(self, yaw_a, yaw_b, k):
        a = HeliPose(0, 0, 0, yaw=yaw_a)
        b = HeliPose(0, 0, 0, yaw=yaw_b)
        b_shift = HeliPose(0, 0, 0, yaw=wrap_angle(yaw_b) + 2 * math.pi * k)
        assert pose_error(a, b).dyaw == pytest.approx(pose_error(a, b_shift).dyaw, abs=1e-9)

    @given(st.floats(-100, 100), st.floats(-100, 100), finite_angles,
           st.floats(-100, 100), st.floats(-100, 100), finite_angles)
    def test_symmetric(self, x1, y1, w1, x2, y2, w2):
        a = HeliPose(x1, y1, 0, yaw=w1)
        b = HeliPose(x2, y2, 0, yaw=w2)
        ab, ba = pose_error(a, b), pose_error(b, a)
        assert (ab.dx, ab.dy, ab.dyaw) == (ba.dx, ba.dy, ba.dyaw)

    def test_triangle_inequality_per_component(self, rng):
        for _ in range(200):
            a, b, c = (HeliPose(rng.uniform(-5, 5), rng.uniform(-5, 5), 0, yaw=rng.uniform(-3, 3))
                       for _ in range(3))
            e_ac, e_ab, e_bc = pose_error(a, c), pose_error(a, b), pose_error(b, c)
            assert e_ac.dx <= e_ab.dx + e_bc.dx + 1e-12
            assert e_ac.dy <= e_ab.dy + e_bc.dy + 1e-12
            assert e_ac.dyaw <= e_ab.dyaw + e_bc.dyaw + 1e-12

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            PoseError(dx=-1.0, dy=0.0, dyaw=0.0)
        with pytest.raises(ValueError):
            PoseError(dx=0.0, dy=0.0, dyaw=3.5)


class TestSkeleton:
    def test_default_has_19_keypoints(self):
        assert len(default_skeleton().keypoints) == 19

    def test_canonical_names_in_order(self):
        assert default_skeleton().names() == KEYPOINT_NAMES

    def test_names_unique(self):
        names = default_skeleton().names()
        assert len(set(names)) == len(names)

    def test_non_coplanar(self):
        # rank of the centered coordinate matrix must be a solid 3
        pts = default_skeleton().points()
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        assert sv[2] > 1.0  # meters of spread on the weakest axis

    def test_coplanar_rejected(self):
        kps = tuple(
            SkeletonKeypoint(name=n, p_model=np.array([i * 0.5, (i % 5) * 1.0, 0.0]))
            for i, n in enumerate(KEYPOINT_NAMES)
        )
        with pytest.raises(ValueError):
            Skeleton(keypoints=kps)

    def test_wrong_count_rejected(self):
        kps = default_skeleton().keypoints[:10]
        with pytest.raises(ValueError):
            Skeleton(keypoints=kps)

    def test_load_from_file_matches_default(self, tmp_path):
        src = default_skeleton()
        doc = {
            "version": 1,
            "name": "copy",
            "keypoints": [
                {"name": kp.name, "x": kp.p_model[0], "y": kp.p_model[1], "z": kp.p_model[2]}
                for kp in src.keypoints
            ],
        }
        path = tmp_path / "skeleton.json"
        path.write_text(json.dumps(doc))
        loaded = load_skeleton(path)
        assert loaded.names() == src.names()
        assert np.allclose(loaded.points(), src.points())

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "skeleton.json"
        path.write_text(json.dumps({"version": 99, "keypoints": []}))
        with pytest.raises(ValueError):
            load_skeleton(path)


class TestDLASpec:
    def test_contains_center(self):
        assert DLASpec().contains(0.0, 0.0, 0.0)

    def test_tolerance_edges(self):
        dla = DLASpec()
        assert dla.contains(0.1524, 0.0, 0.0)
        assert not dla.contains(0.16, 0.0, 0.0)
        assert dla.contains(0.0, 0.0, 0.5)
        assert not dla.contains(0.0, 0.0, 0.51)

    def test_yaw_wrap(self):
        dla = DLASpec(yaw_ref=3.0)
        assert dla.contains(0.0, 0.0, -3.1)  # wrapped difference ~0.18 rad

    def test_positive_tolerances_required(self):
        with pytest.raises(ValueError):
            DLASpec(tol_x=0.0)


def test_keypoint_observation_validation():
    with pytest.raises(ValueError):
        KeypointObservation(name="nose", u=math.nan, v=0.0, visible=True)
    KeypointObservation(name="nose", u=math.nan, v=0.0, visible=False)  # fine when hidden


def test_rotation_zyx_axis_conventions():
    # yaw rotates x toward y, pitch rotates z toward x, roll rotates y toward z
    assert np.allclose(rotation_zyx(0, 0, math.pi / 2) @ [1, 0, 0], [0, 1, 0], atol=1e-12)
    assert np.allclose(rotation_zyx(0, math.pi / 4, 0) @ [0, 0, 1], [math.sin(math.pi / 4), 0, math.cos(math.pi / 4)], atol=1e-12)
    assert np.allclose(rotation_zyx(math.pi / 2, 0, 0) @ [0, 1, 0], [0, 0, 1], atol=1e-12)
