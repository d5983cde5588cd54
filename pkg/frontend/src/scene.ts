// Pure rendering: ViewState in, display list out. No canvas, no DOM - the
// painter in draw.ts walks the shape list, and tests snapshot it directly.

import { ViewState, trailPoints } from "./state.js";

export const GREEN_COLOR = "#22c55e";
export const RED_COLOR = "#ef4444";
export const WARN_COLOR = "#f59e0b";

export interface PanelGeometry {
  width: number;
  height: number;
}

export const CAMERA_PANEL: PanelGeometry = { width: 640, height: 360 };
export const DECK_PANEL: PanelGeometry = { width: 420, height: 420 };

// source image size produced by the service camera
const IMAGE_W = 1280;
const IMAGE_H = 720;

// deck-plot window in meters (x athwartships, y fore-aft) and DLA tolerance
const DECK_X_SPAN: [number, number] = [-4, 4];
const DECK_Y_SPAN: [number, number] = [-4, 4];
export const DLA_TOL = 0.1524;

export type Shape =
  | { kind: "rect"; x: number; y: number; w: number; h: number; stroke: string; lineWidth: number; fill?: string }
  | { kind: "dot"; x: number; y: number; r: number; color: string; name?: string }
  | { kind: "polyline"; points: { x: number; y: number }[]; color: string; lineWidth: number }
  | { kind: "text"; x: number; y: number; text: string; color: string; size: number }
  | { kind: "marker"; x: number; y: number; yaw: number; size: number; color: string };

export interface Badge {
  text: string;
  color: string;
}

export interface Scene {
  camera: Shape[];
  deck: Shape[];
  badges: Badge[];
  banner: string | null;
  statusLine: string;
}

function cameraScale(): { sx: number; sy: number } {
  return { sx: CAMERA_PANEL.width / IMAGE_W, sy: CAMERA_PANEL.height / IMAGE_H };
}

export function deckToPanel(x: number, y: number): { x: number; y: number } {
  // +x goes right; +y (fore) goes up the screen
  const px = ((x - DECK_X_SPAN[0]) / (DECK_X_SPAN[1] - DECK_X_SPAN[0])) * DECK_PANEL.width;
  const py = DECK_PANEL.height - ((y - DECK_Y_SPAN[0]) / (DECK_Y_SPAN[1] - DECK_Y_SPAN[0])) * DECK_PANEL.height;
  return { x: px, y: py };
}

export function render(view: ViewState): Scene {
  const camera: Shape[] = [];
  const deck: Shape[] = [];
  const badges: Badge[] = [];
  const msg = view.latest;

  // deck panel furniture: DLA tolerance box centered on the securing device
  const dlaA = deckToPanel(-DLA_TOL, DLA_TOL);
  const dlaB = deckToPanel(DLA_TOL, -DLA_TOL);
  deck.push({ kind: "rect", x: dlaA.x, y: dlaA.y, w: dlaB.x - dlaA.x, h: dlaB.y - dlaA.y, stroke: "#94a3b8", lineWidth: 1.5 });
  deck.push({ kind: "text", x: dlaB.x + 6, y: dlaA.y, text: "DLA", color: "#94a3b8", size: 11 });

  if (msg === null) {
    const banner = view.schemaBanner !== null ? `Unsupported stream schema: ${view.schemaBanner}` : null;
    return { camera, deck, badges, banner, statusLine: `waiting for stream (${view.connection})` };
  }

  const decisionColor = msg.decision === "GREEN" ? GREEN_COLOR : RED_COLOR;
  const { sx, sy } = cameraScale();

  if (msg.bbox !== null) {
    camera.push({
      kind: "rect",
      x: msg.bbox.u0 * sx,
      y: msg.bbox.v0 * sy,
      w: (msg.bbox.u1 - msg.bbox.u0) * sx,
      h: (msg.bbox.v1 - msg.bbox.v0) * sy,
      stroke: decisionColor,
      lineWidth: 3,
    });
  }
  for (const kp of msg.keypoints) {
    camera.push({ kind: "dot", x: kp.u * sx, y: kp.v * sy, r: 3, color: "#38bdf8", name: kp.name });
  }
  if (view.hoveredKeypoint !== null) {
    const kp = msg.keypoints.find((k) => k.name === view.hoveredKeypoint);
    if (kp !== undefined) {
      camera.push({ kind: "text", x: kp.u * sx + 8, y: kp.v * sy - 8, text: kp.name, color: "#e2e8f0", size: 12 });
    }
  }
  if (msg.pose === null) {
    camera.push({
      kind: "text",
      x: CAMERA_PANEL.width / 2 - 60,
      y: CAMERA_PANEL.height / 2,
      text: "NO SOLUTION",
      color: RED_COLOR,
      size: 20,
    });
  }

  // deck panel: pose trail and the current pose marker
  const trail = trailPoints(view).map((p) => deckToPanel(p.x, p.y));
  if (trail.length > 1) {
    deck.push({ kind: "polyline", points: trail, color: "#475569", lineWidth: 1.5 });
  }
  if (msg.pose !== null) {
    const p = deckToPanel(msg.pose.x, msg.pose.y);
    deck.push({ kind: "marker", x: p.x, y: p.y, yaw: msg.pose.yaw, size: 12, color: decisionColor });
  }

  if (msg.pose !== null && !msg.yaw_agreement) {
    badges.push({ text: "YAW CROSS-CHECK DISAGREES", color: WARN_COLOR });
  }
  if (!msg.net_in_distribution) {
    badges.push({ text: "NET OUT OF DISTRIBUTION", color: WARN_COLOR });
  }
  if (view.connection !== "connected") {
    badges.push({ text: "STALE - CONNECTION LOST", color: RED_COLOR });
  }
  if (view.paused) {
    badges.push({ text: "PAUSED", color: "#94a3b8" });
  }

  let statusLine = `frame ${msg.frame_id}  decision ${msg.decision}`;
  if (view.debug) {
    const rms = msg.reproj_rms === null ? "-" : msg.reproj_rms.toFixed(2);
    const lat = msg.latency_ms === null ? "-" : msg.latency_ms.toFixed(1);
    statusLine += `  reproj ${rms} px  latency ${lat} ms  bad ${view.badMessages}`;
  }

  const banner = view.schemaBanner !== null ? `Unsupported stream schema: ${view.schemaBanner}` : null;
  return { camera, deck, badges, banner, statusLine };
}

export function decisionBoxColor(scene: Scene): string | null {
  for (const shape of scene.camera) {
    if (shape.kind === "rect") {
      return shape.stroke;
    }
  }
  return null;
}

export function trailExtent(scene: Scene): { w: number; h: number } | null {
  for (const shape of scene.deck) {
    if (shape.kind === "polyline") {
      const xs = shape.points.map((p) => p.x);
      const ys = shape.points.map((p) => p.y);
      return { w: Math.max(...xs) - Math.min(...xs), h: Math.max(...ys) - Math.min(...ys) };
    }
  }
  return null;
}
