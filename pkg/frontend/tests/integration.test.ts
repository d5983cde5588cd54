// Live round-trip against the real stream service: spawns `helideck serve`,
// replays its websocket stream through the console's parse/render path, and
// checks that operator commands alter subsequent messages as specified.

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import WebSocket from "ws";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { GREEN_COLOR, RED_COLOR, decisionBoxColor, render } from "../src/scene.js";
import { applyPayload, initialViewState } from "../src/state.js";
import { Health, StreamMessage, parseMessage } from "../src/types.js";

let server: ChildProcess;
let baseUrl: string;
let port: number;

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.listen(0, "127.0.0.1", () => {
      const address = srv.address();
      if (address === null || typeof address === "string") {
        reject(new Error("no port"));
        return;
      }
      const p = address.port;
      srv.close(() => resolve(p));
    });
  });
}

async function health(): Promise<Health> {
  const response = await fetch(`${baseUrl}/health`);
  return (await response.json()) as Health;
}

async function command(doc: Record<string, unknown>): Promise<void> {
  const response = await fetch(`${baseUrl}/command`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(doc),
  });
  expect(response.ok).toBe(true);
}

async function collectMessages(count: number): Promise<string[]> {
  return new Promise((resolve, reject) => {
    const ws = new WebSocket(`ws://127.0.0.1:${port}/stream`);
    const payloads: string[] = [];
    const timer = setTimeout(() => {
      ws.close();
      reject(new Error(`timed out with ${payloads.length}/${count} messages`));
    }, 60_000);
    ws.on("message", (data) => {
      payloads.push(String(data));
      if (payloads.length >= count) {
        clearTimeout(timer);
        ws.close();
        resolve(payloads);
      }
    });
    ws.on("error", (err) => {
      clearTimeout(timer);
      reject(err);
    });
  });
}

function parsedPoses(payloads: string[]): StreamMessage[] {
  const out: StreamMessage[] = [];
  for (const p of payloads) {
    const r = parseMessage(p);
    if (r.ok) {
      out.push(r.message);
    }
  }
  return out;
}

function extent(messages: StreamMessage[]): number {
  const xs = messages.filter((m) => m.pose !== null).map((m) => m.pose!.x);
  const ys = messages.filter((m) => m.pose !== null).map((m) => m.pose!.y);
  return Math.max(...xs) - Math.min(...xs) + (Math.max(...ys) - Math.min(...ys));
}

beforeAll(async () => {
  port = await freePort();
  // hover scenario: a static setpoint makes sea-state sway the only motion
  const dir = mkdtempSync(join(tmpdir(), "console-it-"));
  const configPath = join(dir, "service.json");
  const hover = [0.0, 0.2, 0.0, 1.0, 0.0];
  writeFileSync(
    configPath,
    JSON.stringify({
      scenario: {
        seed: 3,
        frame_rate: 20.0,
        sigma_px: 1.0,
        dropout_p: 0.02,
        sea_state: 0,
        waypoints: [[0.0, ...hover.slice(1)], [1.0, ...hover.slice(1)]],
      },
      duration_s: 3600.0,
      // small backlog so freshly collected messages reflect current commands
      ring_size: 8,
    }),
  );
  server = spawn("helideck", ["serve", "--port", String(port), "--config", configPath], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 45_000;
  for (;;) {
    try {
      await health();
      break;
    } catch {
      if (Date.now() > deadline) {
        throw new Error("service did not come up");
      }
      await new Promise((r) => setTimeout(r, 300));
    }
  }
});

afterAll(() => {
  server?.kill();
});

describe("live service round-trip", () => {
  it("replays 100 live messages with box color matching the decision", async () => {
    const payloads = await collectMessages(100);
    let view = initialViewState();
    view = { ...view, connection: "connected" };
    let checked = 0;
    for (const payload of payloads) {
      view = applyPayload(view, payload);
      const scene = render(view);
      if (view.latest?.bbox != null) {
        checked += 1;
        expect(decisionBoxColor(scene)).toBe(
          view.latest.decision === "GREEN" ? GREEN_COLOR : RED_COLOR,
        );
      }
    }
    expect(view.badMessages).toBe(0);
    expect(checked).toBeGreaterThan(90);
  });

  it("pause stops the frame counter and resume restarts it", async () => {
    await command({ command: "pause" });
    await new Promise((r) => setTimeout(r, 300));
    const a = (await health()).frame_id;
    await new Promise((r) => setTimeout(r, 500));
    const b = (await health()).frame_id;
    expect(b).toBe(a);
    await command({ command: "resume" });
    await new Promise((r) => setTimeout(r, 500));
    const c = (await health()).frame_id;
    expect(c).toBeGreaterThan(b);
  });

  it("restart resets the frame counter to zero", async () => {
    const before = (await health()).frame_id;
    expect(before).toBeGreaterThan(20);
    await command({ command: "restart" });
    await new Promise((r) => setTimeout(r, 400));
    const after = (await health()).frame_id;
    expect(after).toBeLessThan(before);
    expect(after).toBeLessThan(30);
  });

  it("sea state 4 grows the deck trail extent", async () => {
    // sway sinusoids have 8-11 s periods: windows must span most of a cycle
    await command({ command: "set_sea_state", sea_state: 0 });
    await new Promise((r) => setTimeout(r, 300));
    const calm = parsedPoses(await collectMessages(210).then((p) => p.slice(-200)));
    await command({ command: "set_sea_state", sea_state: 4 });
    await new Promise((r) => setTimeout(r, 500));
    const rough = parsedPoses(await collectMessages(210).then((p) => p.slice(-200)));
    const calmExtent = extent(calm);
    const roughExtent = extent(rough);
    expect(roughExtent).toBeGreaterThan(calmExtent * 2.5);
    expect(roughExtent).toBeGreaterThan(0.2);
    expect((await health()).sea_state).toBe(4);
  });

  it("rejects invalid commands with an error status", async () => {
    const response = await fetch(`${baseUrl}/command`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ command: "set_sea_state", sea_state: 42 }),
    });
    expect(response.status).toBe(422);
  });
});
