"""Command-line entry points: dataset generation, training, eval, calibration,
headless demo runs and the live streaming service."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .calibration import DeckMarking, load_camera, load_marking_map, recalibrate, save_camera
from .model import DLASpec, wrap_angles
from .service import (
    ServiceConfig,
    load_service_config,
    message_from_result,
    message_to_doc,
    serve,
    service_config_to_doc,
)
from .simulator import (
    NOISE_PRESETS,
    ScenarioConfig,
    TrajectoryPlan,
    gen_dataset,
    load_dataset,
    load_scene,
    scenario_from_doc,
    scenario_to_doc,
    simulate_frame,
)
from .tracker import Tracker
from .yawnet import (
    Checkpoint,
    YawNetConfig,
    arrays_from_records,
    load_checkpoint,
    save_checkpoint,
    train,
)

DEMO_VERSION = 1


def _scenario_from_args(args: argparse.Namespace) -> ScenarioConfig:
    if getattr(args, "config", None):
        scenario = load_service_config(args.config).scenario
    else:
        scenario = ScenarioConfig()
    if getattr(args, "preset", None):
        scenario = scenario.with_preset(args.preset)
    if getattr(args, "seed", None) is not None:
        scenario = replace(scenario, seed=args.seed)
    if getattr(args, "sea_state", None) is not None:
        scenario = replace(scenario, sea_state=args.sea_state)
    if getattr(args, "camera", None):
        scenario = replace(scenario, camera_path=args.camera)
    if getattr(args, "markings", None):
        scenario = replace(scenario, marking_map_path=args.markings)
    return scenario


def cmd_gen_data(args: argparse.Namespace) -> int:
    scenario = _scenario_from_args(args)
    train_path, test_path = gen_dataset(scenario, args.train, args.test, args.out)
    print(f"wrote {args.train} records to {train_path}")
    print(f"wrote {args.test} records to {test_path}")
    return 0


def cmd_train_yaw(args: argparse.Namespace) -> int:
    train_records = load_dataset(args.train_data)
    test_records = load_dataset(args.test_data)
    x_train, yaw_train, skipped_train = arrays_from_records(train_records)
    x_test, yaw_test, skipped_test = arrays_from_records(test_records)
    if skipped_train or skipped_test:
        print(
            f"skipped {skipped_train} train / {skipped_test} test records without detections",
            file=sys.stderr,
        )
    config = YawNetConfig(seed=args.seed, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr)
    params, report = train(config, (x_train, yaw_train), (x_test, yaw_test))
    ckpt = Checkpoint(config=config, params=params, tau_rec=report.tau_rec, train_summary=report.summary())
    save_checkpoint(args.out, ckpt)
    print(f"trained {report.steps} steps in {report.wall_time_s:.1f}s")
    print(f"best epoch {report.checkpoint_epochs[-1]}, loss {report.checkpoint_losses[-1]:.6f}")
    print(f"test yaw MAE: {report.test_yaw_mae:.4f} rad")
    print(f"checkpoint written to {args.out}")
    if report.diverged:
        print("training diverged; checkpoint holds the last good parameters", file=sys.stderr)
        return 1
    return 0


def _demo_header(scenario: ScenarioConfig, duration_s: float, dla: DLASpec, with_checkpoint: bool) -> dict:
    return {
        "version": DEMO_VERSION,
        "kind": "demo-results",
        "scenario": scenario_to_doc(scenario),
        "duration_s": duration_s,
        "dla": {
            "center": list(dla.center),
            "tol_x": dla.tol_x,
            "tol_y": dla.tol_y,
            "tol_yaw": dla.tol_yaw,
            "yaw_ref": dla.yaw_ref,
        },
        "with_checkpoint": with_checkpoint,
    }


def run_demo(
    scenario: ScenarioConfig,
    duration_s: float,
    dla: DLASpec,
    checkpoint: Checkpoint | None,
    recalibrate_every: int = 0,
) -> tuple[list[dict], float]:
    """Headless trajectory -> (per-frame docs, measured frames/sec)."""
    intr, extr, marking_map, skeleton = load_scene(scenario)
    plan = TrajectoryPlan(scenario, duration_s)
    tracker = Tracker(
        intr=intr,
        extr=extr,
        skeleton=skeleton,
        checkpoint=checkpoint,
        dla=dla,
        recalibrate_every=recalibrate_every,
    )
    n = round(duration_s * scenario.frame_rate)
    dt = 1.0 / scenario.frame_rate
    docs = []
    started = time.perf_counter()
    for i in range(n):
        pose = plan.pose_at(i * dt, scenario.sea_state)
        frame = simulate_frame(pose, scenario, intr, extr, i, skeleton=skeleton, marking_map=marking_map)
        result = tracker.process_frame(frame, dt=dt)
        msg = message_from_result(result, frame, timestamp_ms=round(i * dt * 1e3, 3), latency=False)
        doc = message_to_doc(msg)
        doc["ground_truth"] = {"x": pose.x, "y": pose.y, "yaw": pose.yaw}
        docs.append(doc)
    elapsed = time.perf_counter() - started
    return docs, (n / elapsed if elapsed > 0 else float("inf"))


def cmd_demo(args: argparse.Namespace) -> int:
    scenario = _scenario_from_args(args)
    dla = DLASpec()
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint else None
    docs, fps = run_demo(scenario, args.duration, dla, checkpoint, args.recalibrate_every)
    with open(args.out, "w", encoding="utf-8") as f:
        header = _demo_header(scenario, args.duration, dla, checkpoint is not None)
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for doc in docs:
            f.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
    print(f"wrote {len(docs)} frames to {args.out}", file=sys.stderr)
    print(f"processing rate: {fps:.1f} frames/sec", file=sys.stderr)
    return 0


def _percentiles(values: np.ndarray) -> dict:
    return {
        "mean": float(np.mean(values)),
        "p50": float(np.percentile(values, 50)),
        "p95": float(np.percentile(values, 95)),
        "max": float(np.max(values)),
    }


def evaluate_demo_file(path: str | Path) -> dict:
    """Error statistics of a demo results file against its ground truth."""
    with open(path, encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("kind") != "demo-results":
            raise ValueError(f"{path} is not a demo results file")
        records = [json.loads(line) for line in f if line.strip()]
    solved = [r for r in records if r["pose"] is not None]
    stats: dict = {
        "frames": len(records),
        "solved": len(solved),
        "green": sum(1 for r in records if r["decision"] == "GREEN"),
        "header": header,
    }
    if solved:
        ex = np.array([abs(r["pose"]["x"] - r["ground_truth"]["x"]) for r in solved])
        ey = np.array([abs(r["pose"]["y"] - r["ground_truth"]["y"]) for r in solved])
        eyaw = np.abs(wrap_angles(np.array([r["pose"]["yaw"] - r["ground_truth"]["yaw"] for r in solved])))
        stats["x_error_m"] = _percentiles(ex)
        stats["y_error_m"] = _percentiles(ey)
        stats["yaw_error_rad"] = _percentiles(eyaw)
        within = np.mean((ex < 0.1524) & (ey < 0.1524) & (eyaw < 0.5))
        stats["within_envelope"] = float(within)
        stats["agreement_rate"] = float(np.mean([r["yaw_agreement"] for r in solved]))
    return stats


def _print_error_table(stats: dict) -> None:
    print(f"frames: {stats['frames']}  solved: {stats['solved']}  green: {stats['green']}")
    if "x_error_m" in stats:
        print(f"{'axis':<14}{'mean':>12}{'p50':>12}{'p95':>12}{'max':>12}")
        for label, key in (("x [m]", "x_error_m"), ("y [m]", "y_error_m"), ("yaw [rad]", "yaw_error_rad")):
            row = stats[key]
            print(f"{label:<14}{row['mean']:>12.6f}{row['p50']:>12.6f}{row['p95']:>12.6f}{row['max']:>12.6f}")
        print(f"frames within 6in/0.5rad envelope: {100.0 * stats['within_envelope']:.2f}%")
        print(f"yaw cross-check agreement rate:    {100.0 * stats['agreement_rate']:.2f}%")


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint else None

    if args.data:
        if checkpoint is None:
            print("eval --data needs --checkpoint", file=sys.stderr)
            return 1
        records = load_dataset(args.data)
        feats, yaws, skipped = arrays_from_records(records)
        from .yawnet import predict_yaws

        pred = predict_yaws(checkpoint.params, feats, checkpoint.config)
        mae = float(np.mean(np.abs(wrap_angles(pred - yaws))))
        print(f"yaw MAE over {len(yaws)} samples: {mae:.4f} rad ({skipped} skipped)")

    if args.demo:
        stats = evaluate_demo_file(args.demo)
        _print_error_table(stats)
        if args.throughput:
            scenario = scenario_from_doc(stats["header"]["scenario"])
            docs, fps = run_demo(scenario, stats["header"]["duration_s"], DLASpec(), checkpoint)
            print(f"throughput (regenerated run, {len(docs)} frames): {fps:.1f} frames/sec")

    if not args.data and not args.demo:
        print("nothing to evaluate: pass --data and/or --demo", file=sys.stderr)
        return 1
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    intr, previous = load_camera(args.camera)
    marking_map = load_marking_map(args.map)
    with open(args.obs, encoding="utf-8") as f:
        obs_entries = json.load(f)
    markings = []
    for e in obs_entries:
        mid = str(e["id"])
        if mid not in marking_map:
            print(f"observation references unknown marking {mid!r}", file=sys.stderr)
            return 1
        markings.append(DeckMarking(id=mid, p_deck=marking_map[mid], uv=(float(e["u"]), float(e["v"]))))
    extr, report = recalibrate(markings, intr, previous)
    print(
        f"reproj RMS {report.reproj_rms:.3f} px, rotation change {report.rotation_change_deg:.3f} deg,"
        f" translation change {report.translation_change_m:.4f} m"
    )
    if not report.accepted:
        print(f"calibration rejected: {report.reason}", file=sys.stderr)
        return 1
    save_camera(args.out, intr, extr)
    print(f"accepted; camera written to {args.out}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    if args.config:
        config = load_service_config(args.config)
    else:
        config = ServiceConfig(scenario=_scenario_from_args(args))
    if args.checkpoint:
        config.checkpoint_path = args.checkpoint
    if args.recalibrate_every is not None:
        config.recalibrate_every = args.recalibrate_every
    serve(config, port=args.port, host=args.host, ui_dir=args.ui)
    return 0


def cmd_init_config(args: argparse.Namespace) -> int:
    config = ServiceConfig(scenario=_scenario_from_args(args))
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(service_config_to_doc(config), f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote default service config to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="helideck", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scenario_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="service config JSON supplying the scenario")
        p.add_argument("--preset", choices=sorted(NOISE_PRESETS), help="noise preset")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--sea-state", dest="sea_state", type=int, default=None, choices=range(7))
        p.add_argument("--camera", help="camera parameter JSON (default: bundled)")
        p.add_argument("--markings", help="deck marking map JSON (default: bundled)")

    p = sub.add_parser("gen-data", help="generate train/test keypoint datasets")
    add_scenario_flags(p)
    p.add_argument("--train", type=int, default=4000)
    p.add_argument("--test", type=int, default=1000)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-yaw", help="train the yaw estimator on a dataset")
    p.add_argument("--train-data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=5e-4)
    p.set_defaults(func=cmd_train_yaw)

    p = sub.add_parser("demo", help="run a headless trajectory and write results")
    add_scenario_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--checkpoint", help="yaw checkpoint (optional)")
    p.add_argument("--recalibrate-every", type=int, default=0)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("eval", help="print the evaluation table for runs/datasets")
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="dataset JSONL for yaw MAE")
    p.add_argument("--demo", help="demo results file for pose error percentiles")
    p.add_argument("--throughput", action="store_true", help="also measure processing rate")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="refresh camera extrinsics from marking observations")
    p.add_argument("--camera", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--obs", required=True, help="JSON list of {id, u, v}")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("serve", help="run the live stream service")
    add_scenario_flags(p)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--checkpoint")
    p.add_argument("--recalibrate-every", type=int, default=None)
    p.add_argument("--ui", help="directory of built operator console assets")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("init-config", help="write a default service config file")
    add_scenario_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_config)

    return parser


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
