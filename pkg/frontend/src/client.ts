// Reconnecting WebSocket client: exponential backoff, a bounded offline
// queue, a trailing-edge throttle for continuous controls, and a telemetry
// staleness watchdog so a silently dead server still raises the banner.

import { ControlEvent, encodeEvent, parseServerMessage } from "./protocol.js";
import type { PanelStore } from "./store.js";

export interface WsLike {
  readyState: number;
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type WsFactory = (url: string) => WsLike;

const WS_OPEN = 1;

export interface ClientOptions {
  backoffBaseMs?: number;
  backoffMaxMs?: number;
  throttleMs?: number; // continuous controls (joystick, orientation)
  staleAfterMs?: number; // telemetry silence treated as a dead connection
  queueLimit?: number;
}

export class PanelClient {
  private ws: WsLike | null = null;
  private backoffMs: number;
  private readonly base: number;
  private readonly max: number;
  private readonly throttleMs: number;
  private readonly staleAfterMs: number;
  private readonly queueLimit: number;
  private queue: ControlEvent[] = [];
  private pendingThrottled = new Map<string, ControlEvent>();
  private throttleTimer: ReturnType<typeof setTimeout> | null = null;
  private lastThrottledSendMs = 0;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private watchdogTimer: ReturnType<typeof setTimeout> | null = null;
  private disposed = false;

  constructor(
    readonly url: string,
    private readonly store: PanelStore,
    private readonly factory: WsFactory = (u) =>
      new WebSocket(u) as unknown as WsLike,
    opts: ClientOptions = {},
  ) {
    this.base = opts.backoffBaseMs ?? 500;
    this.max = opts.backoffMaxMs ?? 8000;
    this.throttleMs = opts.throttleMs ?? 34; // <= 30 Hz
    this.staleAfterMs = opts.staleAfterMs ?? 2000;
    this.queueLimit = opts.queueLimit ?? 100;
    this.backoffMs = this.base;
  }

  connect(): void {
    if (this.disposed) return;
    this.store.setStatus("connecting", this.url);
    let ws: WsLike;
    try {
      ws = this.factory(this.url);
    } catch (err) {
      this.store.setStatus("disconnected", String(err));
      this.scheduleReconnect();
      return;
    }
    this.ws = ws;
    ws.onopen = () => {
      this.backoffMs = this.base;
      this.store.setStatus("connected");
      this.feedWatchdog();
      this.flushQueue();
    };
    ws.onmessage = (ev) => {
      this.feedWatchdog();
      const msg = parseServerMessage(String(ev.data));
      if (msg) this.store.applyServerMessage(msg, Date.now());
    };
    ws.onerror = () => {
      // onclose follows; nothing to do here, the page must never crash
    };
    ws.onclose = () => {
      if (this.ws !== ws) return;
      this.ws = null;
      this.clearWatchdog();
      this.store.setStatus("disconnected", "connection lost");
      this.scheduleReconnect();
    };
  }

  dispose(): void {
    this.disposed = true;
    if (this.reconnectTimer) clearTimeout(this.reconnectTimer);
    if (this.throttleTimer) clearTimeout(this.throttleTimer);
    this.clearWatchdog();
    if (this.ws) {
      const ws = this.ws;
      this.ws = null;
      ws.onclose = null;
      ws.close();
    }
  }

  get connected(): boolean {
    return this.ws !== null && this.ws.readyState === WS_OPEN;
  }

  get queuedCount(): number {
    return this.queue.length;
  }

  send(event: ControlEvent): void {
    if (event.kind === "joy_set" || event.kind === "orient_set") {
      this.sendThrottled(event);
      return;
    }
    this.deliver(event);
  }

  private sendThrottled(event: ControlEvent): void {
    const now = Date.now();
    const since = now - this.lastThrottledSendMs;
    if (since >= this.throttleMs && this.throttleTimer === null) {
      this.lastThrottledSendMs = now;
      this.deliver(event);
      return;
    }
    // keep only the newest value per control; flush on the trailing edge
    this.pendingThrottled.set(event.kind, event);
    if (this.throttleTimer === null) {
      this.throttleTimer = setTimeout(
        () => this.flushThrottled(),
        this.throttleMs - since,
      );
    }
  }

  private flushThrottled(): void {
    this.throttleTimer = null;
    this.lastThrottledSendMs = Date.now();
    const pending = [...this.pendingThrottled.values()];
    this.pendingThrottled.clear();
    for (const event of pending) this.deliver(event);
  }

  private deliver(event: ControlEvent): void {
    if (this.connected) {
      try {
        this.ws!.send(encodeEvent(event));
        return;
      } catch {
        // fall through to queueing
      }
    }
    if (this.queue.length >= this.queueLimit) {
      this.queue.shift();
      this.store.recordDropped(1);
    }
    this.queue.push(event);
  }

  private flushQueue(): void {
    const backlog = this.queue;
    this.queue = [];
    for (const event of backlog) this.deliver(event);
  }

  private scheduleReconnect(): void {
    if (this.disposed || this.reconnectTimer !== null) return;
    const delay = this.backoffMs;
    this.backoffMs = Math.min(this.backoffMs * 2, this.max);
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      this.connect();
    }, delay);
  }

  private feedWatchdog(): void {
    this.clearWatchdog();
    this.watchdogTimer = setTimeout(() => {
      // connected but silent past the telemetry deadline: declare it dead
      if (this.ws !== null) {
        const ws = this.ws;
        this.ws = null;
        ws.onclose = null;
        try {
          ws.close();
        } catch {
          // already gone
        }
        this.store.setStatus("disconnected", "telemetry timed out");
        this.scheduleReconnect();
      }
    }, this.staleAfterMs);
  }

  private clearWatchdog(): void {
    if (this.watchdogTimer !== null) {
      clearTimeout(this.watchdogTimer);
      this.watchdogTimer = null;
    }
  }
}
