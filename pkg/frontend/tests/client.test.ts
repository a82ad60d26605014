import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { PanelClient, WsLike } from "../src/client.js";
import { PanelStore } from "../src/store.js";

class MockWebSocket implements WsLike {
  static instances: MockWebSocket[] = [];
  readyState = 0;
  sent: string[] = [];
  closed = false;
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;

  constructor(readonly url: string) {
    MockWebSocket.instances.push(this);
  }

  send(data: string): void {
    if (this.readyState !== 1) throw new Error("not open");
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
    this.readyState = 3;
  }

  serverOpen(): void {
    this.readyState = 1;
    this.onopen?.();
  }

  serverMessage(data: string): void {
    this.onmessage?.({ data });
  }

  serverClose(): void {
    this.readyState = 3;
    this.onclose?.();
  }
}

function newClient(store = new PanelStore()) {
  const client = new PanelClient("ws://test:1", store,
    (url) => new MockWebSocket(url));
  return { client, store };
}

function lastWs(): MockWebSocket {
  return MockWebSocket.instances[MockWebSocket.instances.length - 1];
}

const TELEMETRY = JSON.stringify({ telemetry: { activity: 0.5, generations: 1 } });

beforeEach(() => {
  vi.useFakeTimers();
  MockWebSocket.instances = [];
});

afterEach(() => {
  vi.useRealTimers();
});

describe("PanelClient connection lifecycle", () => {
  it("reports connected after the socket opens", () => {
    const { client, store } = newClient();
    client.connect();
    expect(store.status).toBe("connecting");
    lastWs().serverOpen();
    expect(store.status).toBe("connected");
    client.dispose();
  });

  it("shows the banner immediately on close and reconnects with backoff", () => {
    const { client, store } = newClient();
    client.connect();
    lastWs().serverOpen();
    lastWs().serverClose();
    expect(store.status).toBe("disconnected");
    expect(MockWebSocket.instances.length).toBe(1);
    vi.advanceTimersByTime(500);
    expect(MockWebSocket.instances.length).toBe(2);
    // still down: successive attempts back off 1s, 2s, 4s, 8s, 8s
    for (const delay of [1000, 2000, 4000, 8000, 8000]) {
      lastWs().serverClose();
      vi.advanceTimersByTime(delay - 1);
      const before = MockWebSocket.instances.length;
      vi.advanceTimersByTime(1);
      expect(MockWebSocket.instances.length).toBe(before + 1);
    }
    client.dispose();
  });

  it("declares a silent connection dead within the stale deadline", () => {
    const { client, store } = newClient();
    client.connect();
    lastWs().serverOpen();
    lastWs().serverMessage(TELEMETRY);
    expect(store.status).toBe("connected");
    vi.advanceTimersByTime(1999);
    expect(store.status).toBe("connected");
    vi.advanceTimersByTime(2);
    expect(store.status).toBe("disconnected");
    client.dispose();
  });

  it("telemetry keeps feeding the watchdog", () => {
    const { client, store } = newClient();
    client.connect();
    lastWs().serverOpen();
    for (let i = 0; i < 10; i++) {
      vi.advanceTimersByTime(1000);
      lastWs().serverMessage(TELEMETRY);
    }
    expect(store.status).toBe("connected");
    expect(store.telemetryCount).toBe(10);
    client.dispose();
  });
});

describe("PanelClient send paths", () => {
  it("sends discrete events immediately while connected", () => {
    const { client } = newClient();
    client.connect();
    lastWs().serverOpen();
    client.send({ kind: "button_down", index: 1 });
    client.send({ kind: "button_up", index: 1 });
    client.send({ kind: "encoder_step", step: 1 });
    expect(lastWs().sent.map((s) => JSON.parse(s).kind)).toEqual([
      "button_down", "button_up", "encoder_step",
    ]);
    client.dispose();
  });

  it("throttles joystick drags to the configured rate, trailing edge wins", () => {
    const { client } = newClient();
    client.connect();
    lastWs().serverOpen();
    for (let i = 0; i <= 20; i++) {
      client.send({ kind: "joy_set", x: i / 20, y: 0 });
      vi.advanceTimersByTime(2); // 500 Hz drag
    }
    const sentNow = lastWs().sent.map((s) => JSON.parse(s));
    expect(sentNow.length).toBeLessThanOrEqual(3); // 42 ms of drag at <=30 Hz
    vi.advanceTimersByTime(40); // trailing edge flushes the final position
    const all = lastWs().sent.map((s) => JSON.parse(s));
    expect(all[all.length - 1].x).toBe(1);
    client.dispose();
  });

  it("coalesces joystick and orientation independently", () => {
    const { client } = newClient();
    client.connect();
    lastWs().serverOpen();
    client.send({ kind: "joy_set", x: 0.1, y: 0 });      // immediate
    client.send({ kind: "joy_set", x: 0.9, y: 0 });      // pending
    client.send({ kind: "orient_set", pitch_deg: 5, roll_deg: 0, yaw_deg: 0 });
    client.send({ kind: "orient_set", pitch_deg: 45, roll_deg: 0, yaw_deg: 0 });
    vi.advanceTimersByTime(40);
    const kinds = lastWs().sent.map((s) => JSON.parse(s));
    expect(kinds.filter((e) => e.kind === "joy_set").length).toBe(2);
    const orients = kinds.filter((e) => e.kind === "orient_set");
    expect(orients.length).toBe(1);
    expect(orients[0].pitch_deg).toBe(45);
    client.dispose();
  });

  it("queues up to 100 events while disconnected and flushes in order", () => {
    const { client, store } = newClient();
    client.connect(); // never opens
    for (let i = 0; i < 120; i++) {
      client.send({ kind: "encoder_step", step: 1 });
    }
    expect(client.queuedCount).toBe(100);
    expect(store.droppedEvents).toBe(20);
    expect(store.notice).toContain("dropped");
    lastWs().serverOpen();
    expect(lastWs().sent.length).toBe(100);
    expect(client.queuedCount).toBe(0);
    client.dispose();
  });

  it("never loses events while connected", () => {
    const { client, store } = newClient();
    client.connect();
    lastWs().serverOpen();
    for (let i = 0; i < 250; i++) {
      client.send({ kind: "encoder_step", step: i % 2 ? 1 : -1 });
    }
    expect(lastWs().sent.length).toBe(250);
    expect(store.droppedEvents).toBe(0);
    client.dispose();
  });
});
