// Stream/command client. Reconnects with backoff; a command sent while
// disconnected is queued once and surfaced as an error if it cannot flush.

import { Health, ScenarioCommand } from "./types.js";

export interface ClientCallbacks {
  onPayload: (payload: string) => void;
  onStatus: (status: "connecting" | "connected" | "disconnected") => void;
  onToast: (text: string) => void;
}

export class ConsoleClient {
  private ws: WebSocket | null = null;
  private pendingCommand: ScenarioCommand | null = null;
  private closed = false;

  constructor(
    private readonly baseUrl: string,
    private readonly callbacks: ClientCallbacks,
  ) {}

  connect(): void {
    if (this.closed) {
      return;
    }
    this.callbacks.onStatus("connecting");
    const wsUrl = this.baseUrl.replace(/^http/, "ws") + "/stream";
    const ws = new WebSocket(wsUrl);
    this.ws = ws;
    ws.addEventListener("open", () => {
      this.callbacks.onStatus("connected");
      void this.flushPending();
    });
    ws.addEventListener("message", (event) => {
      this.callbacks.onPayload(String(event.data));
    });
    ws.addEventListener("close", () => {
      this.callbacks.onStatus("disconnected");
      if (!this.closed) {
        setTimeout(() => this.connect(), 1000);
      }
    });
    ws.addEventListener("error", () => {
      ws.close();
    });
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }

  get connected(): boolean {
    return this.ws !== null && this.ws.readyState === WebSocket.OPEN;
  }

  async sendCommand(cmd: ScenarioCommand): Promise<boolean> {
    if (!this.connected) {
      if (this.pendingCommand === null) {
        this.pendingCommand = cmd; // queued once; replayed on reconnect
        this.callbacks.onToast("disconnected - command queued");
      } else {
        this.callbacks.onToast("disconnected - command dropped");
      }
      return false;
    }
    return this.post(cmd);
  }

  private async flushPending(): Promise<void> {
    if (this.pendingCommand !== null) {
      const cmd = this.pendingCommand;
      this.pendingCommand = null;
      await this.post(cmd);
    }
  }

  private async post(cmd: ScenarioCommand): Promise<boolean> {
    try {
      const response = await fetch(`${this.baseUrl}/command`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(cmd),
      });
      if (!response.ok) {
        this.callbacks.onToast(`command rejected (${response.status})`);
        return false;
      }
      return true;
    } catch (err) {
      this.callbacks.onToast(`command failed: ${String(err)}`);
      return false;
    }
  }

  async health(): Promise<Health> {
    const response = await fetch(`${this.baseUrl}/health`);
    return (await response.json()) as Health;
  }
}
