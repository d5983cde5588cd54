"""Acceptance suite: every release criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -s`` to see one line per criterion.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from fastapi.testclient import TestClient

from helideck.cli import run_cli, run_demo
from helideck.geometry import Correspondence, epnp_solve, pose_to_camera, refine_pose_gn, rotation_angle, _project_rt
from helideck.model import DLASpec, HeliPose, pose_error
from helideck.calibration import DeckMarking, recalibrate, rotation_angle_deg
from helideck.service import ServiceConfig, create_app, parse_message
from helideck.simulator import (
    ScenarioConfig,
    TrajectoryPlan,
    gen_trajectory,
    perturb_camera,
    simulate_frame,
)
from helideck.geometry import project_points
from helideck.tracker import Tracker
from helideck.yawnet import (
    YawNetConfig,
    encode_yaw_targets_batch,
    init_params,
    loss_and_grads,
)


def criterion(name: str, ok: bool, detail: str = "") -> None:
    print(f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"{name} failed: {detail}"


def test_zero_noise_oracle_trajectory(scene):
    intr, extr, mmap, skel = scene
    config = ScenarioConfig(sigma_px=0.0, dropout_p=0.0, seed=1)
    started = time.perf_counter()
    frames = gen_trajectory(config, 60.0)
    tracker = Tracker(intr=intr, extr=extr, skeleton=skel, checkpoint=None, dla=DLASpec())
    worst = (0.0, 0.0, 0.0)
    for frame in frames:
        result = tracker.process_frame(frame, dt=0.1)
        assert result.pose is not None, f"no solution at frame {frame.frame_id}"
        err = pose_error(frame.ground_truth, result.pose)
        worst = (max(worst[0], err.dx), max(worst[1], err.dy), max(worst[2], err.dyaw))
    elapsed = time.perf_counter() - started
    ok = (
        len(frames) == 600
        and worst[0] < 1e-5
        and worst[1] < 1e-5
        and worst[2] < 1e-7
        and elapsed < 30.0
    )
    criterion(
        "zero-noise oracle (600 frames)",
        ok,
        f"worst dx={worst[0]:.2e} m dy={worst[1]:.2e} m dyaw={worst[2]:.2e} rad, runtime {elapsed:.1f}s",
    )


def test_dusk_preset_accuracy_envelope(scene, full_training):
    ckpt, _, _ = full_training
    intr, extr, mmap, skel = scene
    config = ScenarioConfig(seed=11).with_preset("dusk")
    plan = TrajectoryPlan(config, 60.0)
    tracker = Tracker(intr=intr, extr=extr, skeleton=skel, checkpoint=ckpt, dla=DLASpec())
    ex, ey, eyaw = [], [], []
    n = 600
    for i in range(n):
        pose = plan.pose_at(i * 0.1, config.sea_state)
        frame = simulate_frame(pose, config, intr, extr, i, skeleton=skel, marking_map=mmap)
        result = tracker.process_frame(frame, dt=0.1)
        if result.pose is None:
            ex.append(math.inf); ey.append(math.inf); eyaw.append(math.inf)
            continue
        err = pose_error(pose, result.pose)
        ex.append(err.dx); ey.append(err.dy); eyaw.append(err.dyaw)
    ex, ey, eyaw = map(np.array, (ex, ey, eyaw))
    within = float(np.mean((ex < 0.1524) & (ey < 0.1524) & (eyaw < 0.5)))
    print("  error CDF (deciles 10%..100%):")
    deciles = np.arange(10, 101, 10)
    for label, arr in (("x [m]", ex), ("y [m]", ey), ("yaw [rad]", eyaw)):
        row = "  ".join(f"{np.percentile(arr, q):.4f}" for q in deciles)
        print(f"    {label:<10} {row}")
    criterion(
        "dusk-preset accuracy envelope",
        within >= 0.95,
        f"{100 * within:.2f}% of frames within 6 in / 0.5 rad (need >= 95%)",
    )


def test_yaw_estimator_accuracy(full_training):
    ckpt, report, wall = full_training
    ok = report.test_yaw_mae < 0.1 and wall < 600.0
    criterion(
        "yaw estimator (4000 train / 1000 test)",
        ok,
        f"test MAE {report.test_yaw_mae:.4f} rad (need < 0.1), training {wall:.1f}s (need < 600)",
    )


def test_epnp_property_suite(scene):
    intr, extr, _, skel = scene
    pts = skel.points()
    rng = np.random.default_rng(2000)
    worst_t, worst_r, worst_rms, worst_orth = 0.0, 0.0, 0.0, 0.0
    for _ in range(100):
        pose = HeliPose(
            x=rng.uniform(-2.0, 2.0), y=rng.uniform(-1.0, 2.0), z=rng.uniform(0.6, 1.3),
            roll=rng.uniform(-0.05, 0.05), pitch=rng.uniform(-0.05, 0.05),
            yaw=rng.uniform(-math.pi, math.pi),
        )
        rot_c, t_c = pose_to_camera(pose, extr)
        uv = _project_rt(rot_c, t_c, pts, intr)
        corrs = [Correspondence(p_model=pts[i], uv=uv[i]) for i in range(len(pts))]
        sol = refine_pose_gn(epnp_solve(corrs, intr), corrs, intr)
        worst_t = max(worst_t, float(np.linalg.norm(sol.translation - t_c)))
        worst_r = max(worst_r, rotation_angle(sol.rotation, rot_c))
        worst_rms = max(worst_rms, sol.reproj_rms)
        worst_orth = max(worst_orth, float(np.max(np.abs(sol.rotation.T @ sol.rotation - np.eye(3)))))
    ok = worst_t < 1e-6 and worst_r < 1e-8 and worst_rms < 1e-8 and worst_orth < 1e-9
    criterion(
        "pose solver property suite (100 poses)",
        ok,
        f"worst |dt|={worst_t:.2e} m, dR={worst_r:.2e} rad, rms={worst_rms:.2e} px, orth={worst_orth:.2e}",
    )


def test_calibration_perturbation_recovery(scene):
    intr, extr, mmap, _ = scene
    subset = ["m01", "m03", "m10", "m12", "m07", "m09", "m02", "m11"]
    rng = np.random.default_rng(42)
    rot_err, t_err = [], []
    for _ in range(100):
        ang = rng.uniform(-2.0, 2.0, size=3)
        dpos = rng.uniform(-0.05, 0.05, size=3)
        true = perturb_camera(extr, *ang, dposition=tuple(dpos))
        pts = np.array([[mmap[m][0], mmap[m][1], 0.0] for m in subset])
        uv, in_front = project_points(pts, intr, true)
        assert in_front.all()
        uv_noisy = uv + rng.normal(0.0, 0.5, uv.shape)
        marks = [DeckMarking(id=m, p_deck=mmap[m], uv=uv_noisy[i]) for i, m in enumerate(subset)]
        out, report = recalibrate(marks, intr, extr)
        assert report.accepted
        rot_err.append(rotation_angle_deg(out.rotation, true.rotation))
        t_err.append(float(np.linalg.norm(out.translation - true.translation)))
    med_r, med_t = float(np.median(rot_err)), float(np.median(t_err))
    ok = med_r < 0.05 and med_t < 0.01
    criterion(
        "calibration recovery (8 markings, 0.5 px noise, 100 trials)",
        ok,
        f"median rotation {med_r:.4f} deg (< 0.05), median translation {med_t:.4f} m (< 0.01)",
    )


def test_loss_gradient_checks():
    worst = 0.0
    for seed in range(10):
        cfg = YawNetConfig(
            feature_dim=6, latent_dim=4, yaw_latent_dim=2,
            encoder_hidden=(5,), decoder_hidden=(5,), head_hidden=(4,), k=4, seed=seed,
        )
        rng = np.random.default_rng(seed + 1000)
        params = init_params(cfg)
        x = rng.normal(0, 1, (3, 6))
        yaws = rng.uniform(-math.pi, math.pi, 3)
        member, offsets = encode_yaw_targets_batch(yaws, cfg.layout())
        _, _, grads = loss_and_grads(params, x, member, offsets, cfg)
        h = 1e-7
        fd_all, an_all = [], []
        for ai, a in enumerate(params.arrays()):
            flat = a.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                lp, _, _ = loss_and_grads(params, x, member, offsets, cfg)
                flat[j] = orig - h
                lm, _, _ = loss_and_grads(params, x, member, offsets, cfg)
                flat[j] = orig
                fd_all.append((lp - lm) / (2 * h))
                an_all.append(grads[ai].reshape(-1)[j])
        fd_all, an_all = np.array(fd_all), np.array(an_all)
        rel = np.linalg.norm(fd_all - an_all) / max(np.linalg.norm(fd_all), np.linalg.norm(an_all))
        worst = max(worst, rel)
    criterion(
        "loss gradient vs central differences (10 seeds)",
        worst < 1e-4,
        f"worst relative error {worst:.2e} (< 1e-4)",
    )


def test_throughput_headless_demo(full_training):
    ckpt, _, _ = full_training
    config = ScenarioConfig(sigma_px=0.0, dropout_p=0.0, seed=1)
    _, fps = run_demo(config, 30.0, DLASpec(), ckpt)
    criterion("headless processing rate", fps >= 100.0, f"{fps:.0f} frames/sec (need >= 100)")


def test_throughput_served_stream_three_clients():
    config = ServiceConfig(scenario=ScenarioConfig(seed=2, frame_rate=10.0), duration_s=60.0)
    app = create_app(config)

    def reader(client):
        fresh = []
        started = None
        with client.websocket_connect("/stream") as ws:
            t_end = time.time() + 2.5
            while time.time() < t_end:
                m = parse_message(ws.receive_text())
                if started is None:
                    started = time.perf_counter()
                fresh.append(m.frame_id)
        return len(set(fresh)) / (time.perf_counter() - started)

    with TestClient(app) as client:
        time.sleep(0.3)
        with ThreadPoolExecutor(max_workers=3) as pool:
            rates = list(pool.map(lambda _: reader(client), range(3)))
    ok = all(rate >= 10.0 for rate in rates)
    criterion(
        "served stream with 3 clients",
        ok,
        "per-client rates: " + ", ".join(f"{r:.1f}/s" for r in rates) + " (need >= 10)",
    )


def test_determinism_of_cli_outputs(tmp_path):
    outputs = {}
    for tag in ("first", "second"):
        base = tmp_path / tag
        assert run_cli(["gen-data", "--train", "300", "--test", "100", "--seed", "7", "--out", str(base)]) == 0
        assert run_cli([
            "train-yaw", "--train-data", str(base / "train.jsonl"), "--test-data", str(base / "test.jsonl"),
            "--out", str(base / "ckpt.json"), "--seed", "0", "--epochs", "4",
        ]) == 0
        assert run_cli([
            "demo", "--preset", "dusk", "--seed", "9", "--duration", "8",
            "--checkpoint", str(base / "ckpt.json"), "--out", str(base / "demo.jsonl"),
        ]) == 0
        outputs[tag] = {
            name: (base / name).read_bytes()
            for name in ("train.jsonl", "test.jsonl", "ckpt.json", "demo.jsonl")
        }
    same = {name: outputs["first"][name] == outputs["second"][name] for name in outputs["first"]}
    criterion(
        "byte-identical reruns (gen-data, train-yaw, demo)",
        all(same.values()),
        ", ".join(f"{k}={'ok' if v else 'DIFFERS'}" for k, v in same.items()),
    )
