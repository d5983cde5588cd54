// Console wiring: socket -> state -> render loop, plus the control strip.

import { ConsoleClient } from "./client.js";
import { drawScene } from "./draw.js";
import { CAMERA_PANEL, DECK_PANEL, render } from "./scene.js";
import { ViewState, applyPayload, initialViewState } from "./state.js";
import { NoisePreset } from "./types.js";

const state: { view: ViewState } = { view: initialViewState() };
let dirty = true;

function mutate(update: (view: ViewState) => ViewState): void {
  state.view = update(state.view);
  dirty = true;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function main(): void {
  const cameraCanvas = el<HTMLCanvasElement>("camera-panel");
  const deckCanvas = el<HTMLCanvasElement>("deck-panel");
  cameraCanvas.width = CAMERA_PANEL.width;
  cameraCanvas.height = CAMERA_PANEL.height;
  deckCanvas.width = DECK_PANEL.width;
  deckCanvas.height = DECK_PANEL.height;
  const cameraCtx = cameraCanvas.getContext("2d");
  const deckCtx = deckCanvas.getContext("2d");
  if (cameraCtx === null || deckCtx === null) {
    throw new Error("canvas 2d context unavailable");
  }

  const baseUrl = `${location.protocol}//${location.host}`;
  const client = new ConsoleClient(baseUrl, {
    onPayload: (payload) => mutate((v) => applyPayload(v, payload)),
    onStatus: (status) => mutate((v) => ({ ...v, connection: status })),
    onToast: (text) => {
      mutate((v) => ({ ...v, toast: text }));
      setTimeout(() => mutate((v) => ({ ...v, toast: null })), 4000);
    },
  });
  client.connect();

  // controls
  const seaSlider = el<HTMLInputElement>("sea-state");
  seaSlider.addEventListener("change", () => {
    const value = Number(seaSlider.value);
    void client.sendCommand({ command: "set_sea_state", sea_state: value });
    mutate((v) => ({ ...v, seaState: value }));
  });
  const presetSelect = el<HTMLSelectElement>("noise-preset");
  presetSelect.addEventListener("change", () => {
    const preset = presetSelect.value as NoisePreset;
    void client.sendCommand({ command: "set_noise_preset", preset });
    mutate((v) => ({ ...v, noisePreset: preset }));
  });
  el<HTMLButtonElement>("pause").addEventListener("click", () => {
    const next = !state.view.paused;
    void client.sendCommand({ command: next ? "pause" : "resume" });
    mutate((v) => ({ ...v, paused: next }));
    el<HTMLButtonElement>("pause").textContent = next ? "Resume" : "Pause";
  });
  el<HTMLButtonElement>("restart").addEventListener("click", () => {
    void client.sendCommand({ command: "restart" });
    mutate((v) => ({ ...v, paused: false }));
    el<HTMLButtonElement>("pause").textContent = "Pause";
  });
  el<HTMLButtonElement>("nudge-camera").addEventListener("click", () => {
    void client.sendCommand({ command: "perturb_camera", droll: 0.3, dpitch: 0.5, dyaw: -0.2 });
  });
  el<HTMLInputElement>("debug-toggle").addEventListener("change", (event) => {
    mutate((v) => ({ ...v, debug: (event.target as HTMLInputElement).checked }));
  });

  // keypoint hover
  cameraCanvas.addEventListener("mousemove", (event) => {
    const rect = cameraCanvas.getBoundingClientRect();
    const mx = event.clientX - rect.left;
    const my = event.clientY - rect.top;
    const scene = render(state.view);
    let best: { name: string; d: number } | null = null;
    for (const shape of scene.camera) {
      if (shape.kind === "dot" && shape.name !== undefined) {
        const d = Math.hypot(shape.x - mx, shape.y - my);
        if (d < 10 && (best === null || d < best.d)) {
          best = { name: shape.name, d };
        }
      }
    }
    const name = best === null ? null : best.name;
    if (name !== state.view.hoveredKeypoint) {
      mutate((v) => ({ ...v, hoveredKeypoint: name }));
    }
  });

  const badgeBox = el<HTMLDivElement>("badges");
  const bannerBox = el<HTMLDivElement>("banner");
  const statusBox = el<HTMLDivElement>("status");
  const toastBox = el<HTMLDivElement>("toast");

  function frame(): void {
    if (dirty) {
      dirty = false;
      const scene = render(state.view);
      drawScene(cameraCtx!, deckCtx!, scene);
      badgeBox.innerHTML = "";
      for (const badge of scene.badges) {
        const span = document.createElement("span");
        span.className = "badge";
        span.style.background = badge.color;
        span.textContent = badge.text;
        badgeBox.appendChild(span);
      }
      bannerBox.style.display = scene.banner === null ? "none" : "block";
      bannerBox.textContent = scene.banner ?? "";
      statusBox.textContent = scene.statusLine;
      toastBox.style.display = state.view.toast === null ? "none" : "block";
      toastBox.textContent = state.view.toast ?? "";
    }
    requestAnimationFrame(frame);
  }
  requestAnimationFrame(frame);
}

window.addEventListener("load", main);
