// WebSocket protocol: control events out, telemetry/ack/error frames in.

export type ControlEvent =
  | { kind: "button_down" | "button_up"; index: number }
  | { kind: "joy_set"; x: number; y: number }
  | { kind: "encoder_step"; step: 1 | -1 }
  | { kind: "orient_set"; pitch_deg: number; roll_deg: number; yaw_deg: number };

export interface Telemetry {
  pitchDeg: number;
  rollDeg: number;
  activity: number;
  condition: number;
  lastGenerationS: number;
  lastAudioRms: number;
  generations: number;
  frames: number;
  joyX: number;
  joyY: number;
  buttons: number;
  encoderPosition: number;
}

export interface ServerMessage {
  telemetry?: Telemetry;
  ok?: string;
  error?: string;
}

function num(v: unknown, fallback = 0): number {
  return typeof v === "number" && isFinite(v) ? v : fallback;
}

export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const obj = data as Record<string, unknown>;

  if (typeof obj.error === "string") return { error: obj.error };
  if (typeof obj.ok === "string") return { ok: obj.ok };

  const t = obj.telemetry;
  if (typeof t !== "object" || t === null) return null;
  const raw_t = t as Record<string, unknown>;
  const attitude = (raw_t.attitude ?? {}) as Record<string, unknown>;
  return {
    telemetry: {
      pitchDeg: num(attitude.pitch_deg),
      rollDeg: num(attitude.roll_deg),
      activity: num(raw_t.activity),
      condition: num(raw_t.condition),
      lastGenerationS: num(raw_t.last_generation_s),
      lastAudioRms: num(raw_t.last_audio_rms),
      generations: num(raw_t.generations),
      frames: num(raw_t.frames),
      joyX: num(raw_t.joy_x),
      joyY: num(raw_t.joy_y),
      buttons: num(raw_t.buttons),
      encoderPosition: num(raw_t.encoder_position),
    },
  };
}

export function encodeEvent(event: ControlEvent): string {
  return JSON.stringify(event);
}
