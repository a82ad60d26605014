import { describe, expect, it } from "vitest";

import { encodeEvent, parseServerMessage } from "../src/protocol.js";

describe("parseServerMessage", () => {
  it("maps a full telemetry frame", () => {
    const raw = JSON.stringify({
      telemetry: {
        activity: 0.25,
        condition: 0.75,
        last_generation_s: 1.05,
        last_audio_rms: 0.12,
        generations: 7,
        frames: 140,
        attitude: { pitch_deg: 30.5, roll_deg: -12.0 },
        joy_x: 0.5,
        joy_y: -0.5,
        buttons: 0b0101,
        encoder_position: 9,
      },
    });
    const msg = parseServerMessage(raw);
    expect(msg?.telemetry).toEqual({
      activity: 0.25,
      condition: 0.75,
      lastGenerationS: 1.05,
      lastAudioRms: 0.12,
      generations: 7,
      frames: 140,
      pitchDeg: 30.5,
      rollDeg: -12.0,
      joyX: 0.5,
      joyY: -0.5,
      buttons: 5,
      encoderPosition: 9,
    });
  });

  it("defaults missing numeric fields to zero", () => {
    const msg = parseServerMessage(JSON.stringify({ telemetry: {} }));
    expect(msg?.telemetry?.activity).toBe(0);
    expect(msg?.telemetry?.buttons).toBe(0);
  });

  it("passes error and ack frames through", () => {
    expect(parseServerMessage('{"error": "bad kind"}')).toEqual({
      error: "bad kind",
    });
    expect(parseServerMessage('{"ok": "button_down"}')).toEqual({
      ok: "button_down",
    });
  });

  it("rejects junk without throwing", () => {
    expect(parseServerMessage("not json at all")).toBeNull();
    expect(parseServerMessage("42")).toBeNull();
    expect(parseServerMessage('{"telemetry": 3}')).toBeNull();
  });
});

describe("encodeEvent", () => {
  it("produces the wire shape the server expects", () => {
    expect(JSON.parse(encodeEvent({ kind: "button_down", index: 2 }))).toEqual({
      kind: "button_down",
      index: 2,
    });
    expect(JSON.parse(encodeEvent({ kind: "joy_set", x: -1, y: 0.5 }))).toEqual({
      kind: "joy_set",
      x: -1,
      y: 0.5,
    });
    expect(
      JSON.parse(encodeEvent({ kind: "orient_set", pitch_deg: 10, roll_deg: 0, yaw_deg: -5 })),
    ).toEqual({ kind: "orient_set", pitch_deg: 10, roll_deg: 0, yaw_deg: -5 });
  });
});
