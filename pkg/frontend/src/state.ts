// Console view state and its reducers. All mutation funnels through
// applyPayload/apply* helpers so the render path stays a pure function.

import { ParseResult, StreamMessage, parseMessage } from "./types.js";

export const HISTORY_LIMIT = 600;

export type ConnectionStatus = "connecting" | "connected" | "disconnected";

export interface ViewState {
  latest: StreamMessage | null;
  history: StreamMessage[]; // ring of the last HISTORY_LIMIT messages, by arrival
  connection: ConnectionStatus;
  seaState: number;
  noisePreset: string;
  paused: boolean;
  badMessages: number;
  schemaBanner: string | null;
  hoveredKeypoint: string | null;
  debug: boolean;
  toast: string | null;
}

export function initialViewState(): ViewState {
  return {
    latest: null,
    history: [],
    connection: "connecting",
    seaState: 0,
    noisePreset: "day",
    paused: false,
    badMessages: 0,
    schemaBanner: null,
    hoveredKeypoint: null,
    debug: false,
    toast: null,
  };
}

export function applyMessage(state: ViewState, message: StreamMessage): ViewState {
  const history = state.history.length >= HISTORY_LIMIT
    ? [...state.history.slice(state.history.length - HISTORY_LIMIT + 1), message]
    : [...state.history, message];
  // a restart shows up as the frame counter jumping backwards: drop the stale trail
  if (state.latest !== null && message.frame_id < state.latest.frame_id) {
    return { ...state, latest: message, history: [message] };
  }
  return { ...state, latest: message, history };
}

export function applyPayload(state: ViewState, payload: string): ViewState {
  const result: ParseResult = parseMessage(payload);
  if (result.ok) {
    return applyMessage(state, result.message);
  }
  if (result.reason === "unknown_schema") {
    return { ...state, badMessages: state.badMessages + 1, schemaBanner: result.detail };
  }
  return { ...state, badMessages: state.badMessages + 1 };
}

export function trailPoints(state: ViewState): { x: number; y: number }[] {
  const points: { x: number; y: number }[] = [];
  for (const m of state.history) {
    if (m.pose !== null) {
      points.push({ x: m.pose.x, y: m.pose.y });
    }
  }
  return points;
}
