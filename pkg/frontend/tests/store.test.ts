import { describe, expect, it } from "vitest";

import type { Telemetry } from "../src/protocol.js";
import { PanelStore } from "../src/store.js";

function telemetry(overrides: Partial<Telemetry> = {}): Telemetry {
  return {
    pitchDeg: 0,
    rollDeg: 0,
    activity: 0,
    condition: 1,
    lastGenerationS: 0,
    lastAudioRms: 0,
    generations: 0,
    frames: 0,
    joyX: 0,
    joyY: 0,
    buttons: 0,
    encoderPosition: 0,
    ...overrides,
  };
}

describe("PanelStore", () => {
  it("notifies subscribers on status changes only when changed", () => {
    const store = new PanelStore();
    let calls = 0;
    store.subscribe(() => calls++);
    store.setStatus("connecting");
    store.setStatus("connecting");
    store.setStatus("connected");
    expect(calls).toBe(2);
  });

  it("keeps the latest telemetry record and counts frames", () => {
    const store = new PanelStore();
    store.applyServerMessage({ telemetry: telemetry({ activity: 0.1 }) }, 1000);
    store.applyServerMessage({ telemetry: telemetry({ activity: 0.9 }) }, 1100);
    expect(store.telemetry?.activity).toBe(0.9);
    expect(store.telemetryCount).toBe(2);
    expect(store.telemetryAtMs).toBe(1100);
  });

  it("tracks rms history and cadence per generation counter change", () => {
    const store = new PanelStore();
    store.applyServerMessage(
      { telemetry: telemetry({ generations: 1, lastAudioRms: 0.2 }) }, 1000);
    store.applyServerMessage(
      { telemetry: telemetry({ generations: 1, lastAudioRms: 0.2 }) }, 1100);
    store.applyServerMessage(
      { telemetry: telemetry({ generations: 2, lastAudioRms: 0.4 }) }, 2050);
    expect(store.rmsHistory).toEqual([0.2, 0.4]);
    expect(store.generationGapS).toBeCloseTo(1.05, 5);
  });

  it("surfaces server error frames as a notice", () => {
    const store = new PanelStore();
    store.applyServerMessage({ error: "bad index" }, 0);
    expect(store.notice).toContain("bad index");
  });

  it("records dropped events with a visible notice", () => {
    const store = new PanelStore();
    store.recordDropped(3);
    store.recordDropped(2);
    expect(store.droppedEvents).toBe(5);
    expect(store.notice).toContain("5");
  });

  it("tracks local control state separately from telemetry", () => {
    const store = new PanelStore();
    store.buttonDown(2);
    store.setJoy(0.5, -0.5);
    store.setOrientation(10, 20, 30);
    expect(store.local.held.has(2)).toBe(true);
    expect(store.telemetry).toBeNull(); // rendering source remains telemetry
    store.buttonUp(2);
    expect(store.local.held.size).toBe(0);
  });
});
