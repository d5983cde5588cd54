// Wire types shared with the stream service, plus strict parsing. The parser
// never throws on junk input: bad payloads come back as a typed rejection so
// the console can count them and keep rendering.

export const SCHEMA_VERSION = 1;

export interface Keypoint {
  name: string;
  u: number;
  v: number;
}

export interface StreamMessage {
  schema_version: number;
  frame_id: number;
  timestamp_ms: number;
  decision: "GREEN" | "RED";
  pose: { x: number; y: number; yaw: number } | null;
  bbox: { u0: number; v0: number; u1: number; v1: number } | null;
  keypoints: Keypoint[];
  yaw_agreement: boolean;
  net_in_distribution: boolean;
  reproj_rms: number | null;
  latency_ms: number | null;
}

export type ParseResult =
  | { ok: true; message: StreamMessage }
  | { ok: false; reason: "malformed" | "unknown_schema"; detail: string };

function isFiniteNumber(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

export function parseMessage(payload: string): ParseResult {
  let doc: unknown;
  try {
    doc = JSON.parse(payload);
  } catch (err) {
    return { ok: false, reason: "malformed", detail: `not JSON: ${String(err)}` };
  }
  if (typeof doc !== "object" || doc === null) {
    return { ok: false, reason: "malformed", detail: "not an object" };
  }
  const d = doc as Record<string, unknown>;
  if (d.schema_version !== SCHEMA_VERSION) {
    return {
      ok: false,
      reason: "unknown_schema",
      detail: `schema_version ${String(d.schema_version)} (expected ${SCHEMA_VERSION})`,
    };
  }
  if (d.decision !== "GREEN" && d.decision !== "RED") {
    return { ok: false, reason: "malformed", detail: `bad decision ${String(d.decision)}` };
  }
  if (!isFiniteNumber(d.frame_id) || !isFiniteNumber(d.timestamp_ms)) {
    return { ok: false, reason: "malformed", detail: "bad frame_id/timestamp" };
  }

  let pose: StreamMessage["pose"] = null;
  if (d.pose !== null && d.pose !== undefined) {
    const p = d.pose as Record<string, unknown>;
    if (!isFiniteNumber(p.x) || !isFiniteNumber(p.y) || !isFiniteNumber(p.yaw)) {
      return { ok: false, reason: "malformed", detail: "bad pose" };
    }
    pose = { x: p.x, y: p.y, yaw: p.yaw };
  }

  let bbox: StreamMessage["bbox"] = null;
  if (d.bbox !== null && d.bbox !== undefined) {
    const b = d.bbox as Record<string, unknown>;
    if (![b.u0, b.v0, b.u1, b.v1].every(isFiniteNumber)) {
      return { ok: false, reason: "malformed", detail: "bad bbox" };
    }
    bbox = { u0: b.u0 as number, v0: b.v0 as number, u1: b.u1 as number, v1: b.v1 as number };
  }

  const keypoints: Keypoint[] = [];
  if (!Array.isArray(d.keypoints)) {
    return { ok: false, reason: "malformed", detail: "keypoints not a list" };
  }
  for (const entry of d.keypoints) {
    const k = entry as Record<string, unknown>;
    if (typeof k.name !== "string" || !isFiniteNumber(k.u) || !isFiniteNumber(k.v)) {
      return { ok: false, reason: "malformed", detail: "bad keypoint entry" };
    }
    keypoints.push({ name: k.name, u: k.u, v: k.v });
  }

  return {
    ok: true,
    message: {
      schema_version: SCHEMA_VERSION,
      frame_id: d.frame_id,
      timestamp_ms: d.timestamp_ms,
      decision: d.decision,
      pose,
      bbox,
      keypoints,
      yaw_agreement: Boolean(d.yaw_agreement),
      net_in_distribution: Boolean(d.net_in_distribution),
      reproj_rms: isFiniteNumber(d.reproj_rms) ? d.reproj_rms : null,
      latency_ms: isFiniteNumber(d.latency_ms) ? d.latency_ms : null,
    },
  };
}

export type NoisePreset = "day" | "dusk" | "night";

export type ScenarioCommand =
  | { command: "set_sea_state"; sea_state: number }
  | { command: "set_noise_preset"; preset: NoisePreset }
  | { command: "perturb_camera"; droll: number; dpitch: number; dyaw: number }
  | { command: "pause" }
  | { command: "resume" }
  | { command: "restart" };

export interface Health {
  fps: number;
  clients: number;
  frame_id: number;
  paused?: boolean;
  sea_state?: number;
}
