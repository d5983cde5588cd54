"""Streaming decision service: trajectory playback, fan-out, operator commands.

One asyncio production loop drives the simulator and tracker at the scenario
frame rate and fans frame messages out to connected websocket clients through
bounded drop-oldest queues, so a stalled client can never hold up the frame
loop. Operator commands are queued and applied only at frame boundaries.

Endpoints: ``/stream`` (websocket, JSON messages), ``/command`` (POST),
``/health`` (GET), plus an optional static mount of the operator console.
"""

from __future__ import annotations

import asyncio
import json
import math
import time
from collections import deque
from contextlib import asynccontextmanager
from dataclasses import dataclass, replace
from pathlib import Path

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from .calibration import load_camera, load_marking_map
from .model import DLASpec, default_skeleton, load_skeleton
from .simulator import (
    NOISE_PRESETS,
    STREAM_DEMO,
    ScenarioConfig,
    TrajectoryPlan,
    default_camera,
    default_marking_map,
    perturb_camera,
    scenario_from_doc,
    scenario_to_doc,
    simulate_frame,
)
from .tracker import FrameResult, Tracker
from .yawnet import Checkpoint, load_checkpoint

SCHEMA_VERSION = 1
RING_SIZE = 600
CLIENT_QUEUE_SIZE = 64
MAX_PERTURB_DEG = 10.0


@dataclass(frozen=True)
class StreamMessage:
    """One frame on the wire. Serializes deterministically (sorted keys)."""

    schema_version: int
    frame_id: int
    timestamp_ms: float
    decision: str
    pose: tuple[float, float, float] | None  # (x, y, yaw)
    bbox: tuple[float, float, float, float] | None
    keypoints: tuple[tuple[str, float, float], ...]
    yaw_agreement: bool
    net_in_distribution: bool
    reproj_rms: float | None
    latency_ms: float | None

    def __post_init__(self):
        if self.decision not in ("GREEN", "RED"):
            raise ValueError(f"decision must be GREEN or RED, got {self.decision!r}")


def message_to_doc(msg: StreamMessage) -> dict:
    return {
        "schema_version": msg.schema_version,
        "frame_id": msg.frame_id,
        "timestamp_ms": msg.timestamp_ms,
        "decision": msg.decision,
        "pose": None if msg.pose is None else {"x": msg.pose[0], "y": msg.pose[1], "yaw": msg.pose[2]},
        "bbox": None
        if msg.bbox is None
        else {"u0": msg.bbox[0], "v0": msg.bbox[1], "u1": msg.bbox[2], "v1": msg.bbox[3]},
        "keypoints": [{"name": n, "u": u, "v": v} for n, u, v in msg.keypoints],
        "yaw_agreement": msg.yaw_agreement,
        "net_in_distribution": msg.net_in_distribution,
        "reproj_rms": msg.reproj_rms,
        "latency_ms": msg.latency_ms,
    }


def serialize_message(msg: StreamMessage) -> str:
    return json.dumps(message_to_doc(msg), sort_keys=True, separators=(",", ":"))


def message_from_doc(doc: dict) -> StreamMessage:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
    pose = doc["pose"]
    bbox = doc["bbox"]
    return StreamMessage(
        schema_version=doc["schema_version"],
        frame_id=int(doc["frame_id"]),
        timestamp_ms=float(doc["timestamp_ms"]),
        decision=doc["decision"],
        pose=None if pose is None else (float(pose["x"]), float(pose["y"]), float(pose["yaw"])),
        bbox=None
        if bbox is None
        else (float(bbox["u0"]), float(bbox["v0"]), float(bbox["u1"]), float(bbox["v1"])),
        keypoints=tuple((k["name"], float(k["u"]), float(k["v"])) for k in doc["keypoints"]),
        yaw_agreement=bool(doc["yaw_agreement"]),
        net_in_distribution=bool(doc["net_in_distribution"]),
        reproj_rms=None if doc["reproj_rms"] is None else float(doc["reproj_rms"]),
        latency_ms=None if doc["latency_ms"] is None else float(doc["latency_ms"]),
    )


def parse_message(payload: str) -> StreamMessage:
    return message_from_doc(json.loads(payload))


def message_from_result(
    result: FrameResult, frame, timestamp_ms: float, latency: bool = True
) -> StreamMessage:
    pose = None
    if result.pose is not None:
        pose = (result.pose.x, result.pose.y, result.pose.yaw)
    keypoints = tuple((o.name, o.u, o.v) for o in frame.observations if o.visible)
    return StreamMessage(
        schema_version=SCHEMA_VERSION,
        frame_id=result.frame_id,
        timestamp_ms=timestamp_ms,
        decision=result.decision,
        pose=pose,
        bbox=result.bbox,
        keypoints=keypoints,
        yaw_agreement=result.yaw_agreement,
        net_in_distribution=result.net_in_distribution,
        reproj_rms=result.reproj_rms,
        latency_ms=result.latency_ms if latency else None,
    )


@dataclass(frozen=True)
class ScenarioCommand:
    """Operator steering of the simulated scenario (not a flight control path)."""

    kind: str
    sea_state: int | None = None
    preset: str | None = None
    droll_deg: float = 0.0
    dpitch_deg: float = 0.0
    dyaw_deg: float = 0.0

    VALID_KINDS = ("set_sea_state", "set_noise_preset", "perturb_camera", "pause", "resume", "restart")

    def __post_init__(self):
        if self.kind not in self.VALID_KINDS:
            raise ValueError(f"unknown command {self.kind!r}")
        if self.kind == "set_sea_state":
            if self.sea_state is None or not 0 <= int(self.sea_state) <= 6:
                raise ValueError("set_sea_state needs sea_state in 0..6")
        if self.kind == "set_noise_preset":
            if self.preset not in ("day", "dusk", "night"):
                raise ValueError("set_noise_preset needs preset day|dusk|night")
        if self.kind == "perturb_camera":
            for d in (self.droll_deg, self.dpitch_deg, self.dyaw_deg):
                if not math.isfinite(d) or abs(d) > MAX_PERTURB_DEG:
                    raise ValueError(f"camera perturbation limited to +-{MAX_PERTURB_DEG} degrees")


def command_from_doc(doc: dict) -> ScenarioCommand:
    if not isinstance(doc, dict) or "command" not in doc:
        raise ValueError("command document needs a 'command' field")
    kind = doc["command"]
    return ScenarioCommand(
        kind=kind,
        sea_state=int(doc["sea_state"]) if "sea_state" in doc else None,
        preset=doc.get("preset"),
        droll_deg=float(doc.get("droll", 0.0)),
        dpitch_deg=float(doc.get("dpitch", 0.0)),
        dyaw_deg=float(doc.get("dyaw", 0.0)),
    )


@dataclass
class ServiceConfig:
    """Everything the serving loop needs, loadable from one JSON document."""

    scenario: ScenarioConfig
    checkpoint_path: str | None = None
    skeleton_path: str | None = None
    dla: DLASpec = DLASpec()
    duration_s: float = 60.0
    recalibrate_every: int = 0
    ring_size: int = RING_SIZE


def service_config_from_doc(doc: dict) -> ServiceConfig:
    scenario = scenario_from_doc(doc.get("scenario", {}))
    dla_doc = doc.get("dla", {})
    dla = DLASpec(
        center=tuple(dla_doc.get("center", (0.0, 0.0))),
        tol_x=dla_doc.get("tol_x", 0.1524),
        tol_y=dla_doc.get("tol_y", 0.1524),
        tol_yaw=dla_doc.get("tol_yaw", 0.5),
        yaw_ref=dla_doc.get("yaw_ref", 0.0),
    )
    return ServiceConfig(
        scenario=scenario,
        checkpoint_path=doc.get("checkpoint_path"),
        skeleton_path=doc.get("skeleton_path"),
        dla=dla,
        duration_s=float(doc.get("duration_s", 60.0)),
        recalibrate_every=int(doc.get("recalibrate_every", 0)),
        ring_size=int(doc.get("ring_size", RING_SIZE)),
    )


def load_service_config(path: str | Path) -> ServiceConfig:
    with open(path, encoding="utf-8") as f:
        return service_config_from_doc(json.load(f))


def service_config_to_doc(config: ServiceConfig) -> dict:
    return {
        "scenario": scenario_to_doc(config.scenario),
        "checkpoint_path": config.checkpoint_path,
        "skeleton_path": config.skeleton_path,
        "dla": {
            "center": list(config.dla.center),
            "tol_x": config.dla.tol_x,
            "tol_y": config.dla.tol_y,
            "tol_yaw": config.dla.tol_yaw,
            "yaw_ref": config.dla.yaw_ref,
        },
        "duration_s": config.duration_s,
        "recalibrate_every": config.recalibrate_every,
        "ring_size": config.ring_size,
    }


class StreamService:
    """Owns the production loop state: tracker, scenario knobs, clients."""

    def __init__(self, config: ServiceConfig, checkpoint: Checkpoint | None = None):
        self.config = config
        self.scenario = config.scenario
        if config.scenario.camera_path is None:
            self.intr, self._base_extr = default_camera()
        else:
            self.intr, self._base_extr = load_camera(config.scenario.camera_path)
        self.true_extr = self._base_extr
        self.marking_map = (
            default_marking_map()
            if config.scenario.marking_map_path is None
            else load_marking_map(config.scenario.marking_map_path)
        )
        self.skeleton = (
            default_skeleton() if config.skeleton_path is None else load_skeleton(config.skeleton_path)
        )
        if checkpoint is None and config.checkpoint_path is not None:
            checkpoint = load_checkpoint(config.checkpoint_path)
        self.checkpoint = checkpoint
        self.plan = TrajectoryPlan(config.scenario, config.duration_s)
        self.tracker = self._new_tracker()

        self.frame_id = 0
        self.paused = False
        self.ring: deque[str] = deque(maxlen=config.ring_size)
        self.clients: dict[int, asyncio.Queue[str]] = {}
        self._next_client_id = 0
        self.commands: deque[ScenarioCommand] = deque()
        self._tick_times: deque[float] = deque(maxlen=30)
        self.dropped_messages = 0

    def _new_tracker(self) -> Tracker:
        return Tracker(
            intr=self.intr,
            extr=self._base_extr,
            skeleton=self.skeleton,
            checkpoint=self.checkpoint,
            dla=self.config.dla,
            recalibrate_every=self.config.recalibrate_every,
        )

    # -- commands ---------------------------------------------------------

    def submit(self, cmd: ScenarioCommand) -> None:
        self.commands.append(cmd)

    def _apply_command(self, cmd: ScenarioCommand) -> None:
        if cmd.kind == "set_sea_state":
            self.scenario = replace(self.scenario, sea_state=int(cmd.sea_state))
        elif cmd.kind == "set_noise_preset":
            sigma, dropout = NOISE_PRESETS[cmd.preset]
            self.scenario = replace(self.scenario, sigma_px=sigma, dropout_p=dropout)
        elif cmd.kind == "perturb_camera":
            self.true_extr = perturb_camera(
                self.true_extr, cmd.droll_deg, cmd.dpitch_deg, cmd.dyaw_deg
            )
        elif cmd.kind == "pause":
            self.paused = True
        elif cmd.kind == "resume":
            self.paused = False
        elif cmd.kind == "restart":
            self.frame_id = 0
            self.true_extr = self._base_extr
            self.tracker = self._new_tracker()
            self.paused = False

    def drain_commands(self) -> None:
        while self.commands:
            self._apply_command(self.commands.popleft())

    # -- frame production ---------------------------------------------------

    def produce_message(self) -> StreamMessage:
        t = (self.frame_id / self.scenario.frame_rate) % self.config.duration_s
        pose = self.plan.pose_at(t, self.scenario.sea_state)
        frame = simulate_frame(
            pose,
            self.scenario,
            self.intr,
            self.true_extr,
            frame_id=self.frame_id,
            stream=STREAM_DEMO,
            skeleton=self.skeleton,
            marking_map=self.marking_map,
        )
        result = self.tracker.process_frame(frame, dt=1.0 / self.scenario.frame_rate)
        msg = message_from_result(result, frame, timestamp_ms=time.time() * 1e3)
        self.frame_id += 1
        self._tick_times.append(time.perf_counter())
        return msg

    def publish(self, payload: str) -> None:
        self.ring.append(payload)
        for queue in self.clients.values():
            if queue.full():
                try:
                    queue.get_nowait()  # drop-oldest, never block the loop
                    self.dropped_messages += 1
                except asyncio.QueueEmpty:
                    pass
            queue.put_nowait(payload)

    def step(self) -> None:
        """One frame boundary: apply queued commands, then produce/publish."""
        self.drain_commands()
        if not self.paused:
            self.publish(serialize_message(self.produce_message()))

    # -- introspection ------------------------------------------------------

    def fps(self) -> float:
        if len(self._tick_times) < 2:
            return 0.0
        span = self._tick_times[-1] - self._tick_times[0]
        return (len(self._tick_times) - 1) / span if span > 0 else 0.0

    def health(self) -> dict:
        return {
            "fps": round(self.fps(), 3),
            "clients": len(self.clients),
            "frame_id": self.frame_id,
            "paused": self.paused,
            "sea_state": self.scenario.sea_state,
            "sigma_px": self.scenario.sigma_px,
            "dropped_messages": self.dropped_messages,
        }

    def register_client(self) -> tuple[int, asyncio.Queue]:
        queue: asyncio.Queue[str] = asyncio.Queue(maxsize=CLIENT_QUEUE_SIZE)
        client_id = self._next_client_id
        self._next_client_id += 1
        self.clients[client_id] = queue
        return client_id, queue

    def drop_client(self, client_id: int) -> None:
        self.clients.pop(client_id, None)


def create_app(config: ServiceConfig, checkpoint: Checkpoint | None = None, ui_dir: str | None = None) -> FastAPI:
    service = StreamService(config, checkpoint)

    async def production_loop() -> None:
        period = 1.0 / service.scenario.frame_rate
        next_tick = time.perf_counter()
        while True:
            service.step()
            next_tick += period
            delay = next_tick - time.perf_counter()
            if delay <= 0:
                next_tick = time.perf_counter()  # fell behind; don't burst
                delay = 0.0
            await asyncio.sleep(delay)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        producer = asyncio.create_task(production_loop())
        try:
            yield
        finally:
            producer.cancel()

    app = FastAPI(title="helideck", lifespan=lifespan)
    app.state.service = service

    @app.get("/health")
    async def health() -> dict:
        return service.health()

    @app.post("/command")
    async def command(doc: dict) -> dict:
        try:
            cmd = command_from_doc(doc)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        service.submit(cmd)
        return {"ok": True, "command": cmd.kind}

    @app.websocket("/stream")
    async def stream(ws: WebSocket) -> None:
        await ws.accept()
        client_id, queue = service.register_client()
        try:
            for payload in list(service.ring):  # late joiners get the ring buffer
                await ws.send_text(payload)
            while True:
                await ws.send_text(await queue.get())
        except WebSocketDisconnect:
            pass
        finally:
            service.drop_client(client_id)

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def serve(config: ServiceConfig, port: int, host: str = "127.0.0.1", ui_dir: str | None = None) -> None:
    """Run the stream service until interrupted."""
    import uvicorn

    app = create_app(config, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
