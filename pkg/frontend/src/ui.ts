// DOM panel: control surfaces on the left, telemetry displays on the right.
// Control indicators render from telemetry echoes, so what you see is what
// the server actually applied.

import type { ControlEvent } from "./protocol.js";
import type { PanelStore } from "./store.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

export class PanelUI {
  private banner: HTMLDivElement;
  private notice: HTMLDivElement;
  private buttons: HTMLButtonElement[] = [];
  private joyPad: HTMLDivElement;
  private joyDot: HTMLDivElement;
  private encoderLabel: HTMLDivElement;
  private sliders: { pitch: HTMLInputElement; roll: HTMLInputElement; yaw: HTMLInputElement };
  private activityBar: HTMLDivElement;
  private conditionBar: HTMLDivElement;
  private activityText: HTMLSpanElement;
  private conditionText: HTMLSpanElement;
  private dial: HTMLCanvasElement;
  private spark: HTMLCanvasElement;
  private cadence: HTMLDivElement;
  private rate: HTMLDivElement;
  private dirty = true;
  private rafActive = false;
  private rendered = 0;

  constructor(
    root: HTMLElement,
    private readonly store: PanelStore,
    private readonly sendEvent: (event: ControlEvent) => void,
  ) {
    this.banner = el("div", "banner disconnected", "disconnected");
    this.notice = el("div", "notice");
    root.appendChild(this.banner);

    const grid = el("div", "grid");
    root.appendChild(grid);
    const controls = el("div", "column");
    const displays = el("div", "column");
    grid.append(controls, displays);

    // buttons 1..4, press/release paired
    const buttonRow = el("div", "row buttons");
    for (let i = 1; i <= 4; i++) {
      const b = el("button", "pad", `B${i}`);
      b.addEventListener("pointerdown", (ev) => {
        ev.preventDefault();
        b.setPointerCapture(ev.pointerId);
        this.store.buttonDown(i);
        this.sendEvent({ kind: "button_down", index: i });
      });
      const release = () => {
        if (!this.store.local.held.has(i)) return;
        this.store.buttonUp(i);
        this.sendEvent({ kind: "button_up", index: i });
      };
      b.addEventListener("pointerup", release);
      b.addEventListener("pointercancel", release);
      this.buttons.push(b);
      buttonRow.appendChild(b);
    }
    controls.append(el("h3", "", "buttons"), buttonRow);

    // joystick pad
    this.joyPad = el("div", "joypad");
    this.joyDot = el("div", "joydot");
    this.joyPad.appendChild(this.joyDot);
    let dragging = false;
    const joyFromPointer = (ev: PointerEvent) => {
      const rect = this.joyPad.getBoundingClientRect();
      const x = ((ev.clientX - rect.left) / rect.width) * 2 - 1;
      const y = -(((ev.clientY - rect.top) / rect.height) * 2 - 1);
      const clamp = (v: number) => Math.max(-1, Math.min(1, v));
      this.store.setJoy(clamp(x), clamp(y));
      this.sendEvent({ kind: "joy_set", x: clamp(x), y: clamp(y) });
    };
    this.joyPad.addEventListener("pointerdown", (ev) => {
      dragging = true;
      this.joyPad.setPointerCapture(ev.pointerId);
      joyFromPointer(ev);
    });
    this.joyPad.addEventListener("pointermove", (ev) => {
      if (dragging) joyFromPointer(ev);
    });
    const joyRelease = () => {
      if (!dragging) return;
      dragging = false;
      this.store.setJoy(0, 0);
      this.sendEvent({ kind: "joy_set", x: 0, y: 0 });
    };
    this.joyPad.addEventListener("pointerup", joyRelease);
    this.joyPad.addEventListener("pointercancel", joyRelease);
    controls.append(el("h3", "", "joystick"), this.joyPad);

    // encoder wheel
    const encRow = el("div", "row");
    const ccw = el("button", "pad", "⟲");
    const cw = el("button", "pad", "⟳");
    this.encoderLabel = el("div", "encoder", "pos 0");
    ccw.addEventListener("click", () =>
      this.sendEvent({ kind: "encoder_step", step: -1 }));
    cw.addEventListener("click", () =>
      this.sendEvent({ kind: "encoder_step", step: 1 }));
    this.encoderLabel.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.sendEvent({ kind: "encoder_step", step: ev.deltaY < 0 ? 1 : -1 });
    });
    encRow.append(ccw, this.encoderLabel, cw);
    controls.append(el("h3", "", "rolling disk"), encRow);

    // orientation sliders
    const makeSlider = (label: string, min: number, max: number) => {
      const wrap = el("div", "slider");
      const input = el("input") as HTMLInputElement;
      input.type = "range";
      input.min = String(min);
      input.max = String(max);
      input.value = "0";
      input.step = "1";
      wrap.append(el("span", "", label), input);
      return { wrap, input };
    };
    const pitch = makeSlider("pitch", -90, 90);
    const roll = makeSlider("roll", -180, 180);
    const yaw = makeSlider("yaw", -180, 180);
    this.sliders = { pitch: pitch.input, roll: roll.input, yaw: yaw.input };
    const sendOrient = () => {
      const p = Number(this.sliders.pitch.value);
      const r = Number(this.sliders.roll.value);
      const y = Number(this.sliders.yaw.value);
      this.store.setOrientation(p, r, y);
      this.sendEvent({ kind: "orient_set", pitch_deg: p, roll_deg: r, yaw_deg: y });
    };
    for (const s of [pitch.input, roll.input, yaw.input]) {
      s.addEventListener("input", sendOrient);
    }
    controls.append(el("h3", "", "orientation"), pitch.wrap, roll.wrap, yaw.wrap);

    // telemetry displays
    this.dial = el("canvas", "dial") as HTMLCanvasElement;
    this.dial.width = 180;
    this.dial.height = 180;
    displays.append(el("h3", "", "attitude"), this.dial);

    const meter = (label: string) => {
      const wrap = el("div", "meter");
      const bar = el("div", "bar");
      const fill = el("div", "fill");
      const text = el("span", "value", "0.00");
      bar.appendChild(fill);
      wrap.append(el("span", "", label), bar, text);
      return { wrap, fill, text };
    };
    const act = meter("activity");
    const cond = meter("condition");
    this.activityBar = act.fill;
    this.activityText = act.text;
    this.conditionBar = cond.fill;
    this.conditionText = cond.text;
    displays.append(act.wrap, cond.wrap);

    this.spark = el("canvas", "spark") as HTMLCanvasElement;
    this.spark.width = 240;
    this.spark.height = 60;
    displays.append(el("h3", "", "render rms"), this.spark);

    this.cadence = el("div", "cadence", "no generations yet");
    this.rate = el("div", "cadence", "");
    displays.append(el("h3", "", "generation"), this.cadence, this.rate);
    root.appendChild(this.notice);

    this.store.subscribe(() => {
      this.dirty = true;
    });
  }

  start(): void {
    if (this.rafActive) return;
    this.rafActive = true;
    const loop = () => {
      if (!this.rafActive) return;
      if (this.dirty) {
        this.dirty = false;
        this.render();
      }
      requestAnimationFrame(loop);
    };
    requestAnimationFrame(loop);
  }

  stop(): void {
    this.rafActive = false;
  }

  get renderCount(): number {
    return this.rendered;
  }

  render(): void {
    this.rendered += 1;
    const s = this.store;
    this.banner.textContent =
      s.status + (s.statusDetail ? ` (${s.statusDetail})` : "");
    this.banner.className = `banner ${s.status}`;
    this.notice.textContent = s.notice;

    const t = s.telemetry;
    if (!t) return;

    for (let i = 0; i < 4; i++) {
      this.buttons[i].classList.toggle("pressed", (t.buttons >> i & 1) === 1);
    }
    this.joyDot.style.left = `${(t.joyX * 0.5 + 0.5) * 100}%`;
    this.joyDot.style.top = `${(-t.joyY * 0.5 + 0.5) * 100}%`;
    this.encoderLabel.textContent = `pos ${t.encoderPosition}`;

    this.activityBar.style.width = `${(t.activity * 100).toFixed(1)}%`;
    this.activityText.textContent = t.activity.toFixed(3);
    this.conditionBar.style.width = `${(t.condition * 100).toFixed(1)}%`;
    this.conditionText.textContent = t.condition.toFixed(3);

    this.drawDial(t.pitchDeg, t.rollDeg);
    this.drawSpark(s.rmsHistory);

    this.cadence.textContent =
      `#${t.generations}, last ${t.lastGenerationS.toFixed(2)} s` +
      (s.generationGapS > 0 ? `, every ~${s.generationGapS.toFixed(2)} s` : "");
    this.rate.textContent = `rms ${t.lastAudioRms.toFixed(4)}, frames ${t.frames}`;
  }

  private drawDial(pitchDeg: number, rollDeg: number): void {
    const ctx = this.dial.getContext("2d");
    if (!ctx) return;
    const w = this.dial.width;
    const h = this.dial.height;
    const r = w / 2 - 4;
    ctx.clearRect(0, 0, w, h);
    ctx.save();
    ctx.translate(w / 2, h / 2);
    ctx.beginPath();
    ctx.arc(0, 0, r, 0, Math.PI * 2);
    ctx.clip();
    ctx.rotate((-rollDeg * Math.PI) / 180);
    const horizon = (pitchDeg / 90) * r;
    ctx.fillStyle = "#38506b";
    ctx.fillRect(-w, -h, 2 * w, h + horizon);
    ctx.fillStyle = "#6b4a2e";
    ctx.fillRect(-w, horizon, 2 * w, h);
    ctx.strokeStyle = "#e8e8e8";
    ctx.beginPath();
    ctx.moveTo(-r, horizon);
    ctx.lineTo(r, horizon);
    ctx.stroke();
    ctx.restore();
    ctx.strokeStyle = "#999";
    ctx.beginPath();
    ctx.arc(w / 2, h / 2, r, 0, Math.PI * 2);
    ctx.stroke();
    ctx.fillStyle = "#ddd";
    ctx.font = "11px monospace";
    ctx.fillText(`p ${pitchDeg.toFixed(1)}°`, 6, 14);
    ctx.fillText(`r ${rollDeg.toFixed(1)}°`, 6, h - 6);
  }

  private drawSpark(history: number[]): void {
    const ctx = this.spark.getContext("2d");
    if (!ctx) return;
    const w = this.spark.width;
    const h = this.spark.height;
    ctx.clearRect(0, 0, w, h);
    if (history.length < 2) return;
    const peak = Math.max(0.001, ...history);
    ctx.strokeStyle = "#7fd18b";
    ctx.beginPath();
    history.forEach((v, i) => {
      const x = (i / (history.length - 1)) * (w - 2) + 1;
      const y = h - 2 - (v / peak) * (h - 4);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }
}
