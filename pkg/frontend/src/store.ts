// Single state store; every rendered value comes from the latest telemetry
// record, never from locally computed pipeline state.

import type { ServerMessage, Telemetry } from "./protocol.js";

export type ConnectionStatus = "connecting" | "connected" | "disconnected";

export interface LocalControl {
  held: Set<number>;
  joyX: number;
  joyY: number;
  pitchDeg: number;
  rollDeg: number;
  yawDeg: number;
}

const RMS_HISTORY = 120;

export class PanelStore {
  status: ConnectionStatus = "disconnected";
  statusDetail = "";
  telemetry: Telemetry | null = null;
  telemetryAtMs = 0;
  telemetryCount = 0;
  rmsHistory: number[] = [];
  generationGapS = 0;
  droppedEvents = 0;
  notice = "";
  local: LocalControl = {
    held: new Set(),
    joyX: 0,
    joyY: 0,
    pitchDeg: 0,
    rollDeg: 0,
    yawDeg: 0,
  };

  private lastGenerations = -1;
  private lastGenerationAtMs = 0;
  private listeners = new Set<() => void>();

  subscribe(fn: () => void): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  setStatus(status: ConnectionStatus, detail = ""): void {
    if (this.status === status && this.statusDetail === detail) return;
    this.status = status;
    this.statusDetail = detail;
    this.emit();
  }

  setNotice(notice: string): void {
    this.notice = notice;
    this.emit();
  }

  recordDropped(count: number): void {
    this.droppedEvents += count;
    this.notice = `${this.droppedEvents} event(s) dropped while disconnected`;
    this.emit();
  }

  applyServerMessage(msg: ServerMessage, nowMs: number): void {
    if (msg.error !== undefined) {
      this.notice = `server rejected event: ${msg.error}`;
      this.emit();
      return;
    }
    if (msg.telemetry === undefined) return;
    const t = msg.telemetry;
    this.telemetry = t;
    this.telemetryAtMs = nowMs;
    this.telemetryCount += 1;
    if (t.generations !== this.lastGenerations) {
      if (this.lastGenerations >= 0 && this.lastGenerationAtMs > 0) {
        this.generationGapS = (nowMs - this.lastGenerationAtMs) / 1000;
      }
      this.lastGenerations = t.generations;
      this.lastGenerationAtMs = nowMs;
      this.rmsHistory.push(t.lastAudioRms);
      if (this.rmsHistory.length > RMS_HISTORY) this.rmsHistory.shift();
    }
    this.emit();
  }

  // local control state mirrors what the user is doing; the UI still renders
  // the authoritative values from telemetry echoes
  buttonDown(index: number): void {
    this.local.held.add(index);
    this.emit();
  }

  buttonUp(index: number): void {
    this.local.held.delete(index);
    this.emit();
  }

  setJoy(x: number, y: number): void {
    this.local.joyX = x;
    this.local.joyY = y;
    this.emit();
  }

  setOrientation(pitchDeg: number, rollDeg: number, yawDeg: number): void {
    this.local.pitchDeg = pitchDeg;
    this.local.rollDeg = rollDeg;
    this.local.yawDeg = yawDeg;
    this.emit();
  }
}
