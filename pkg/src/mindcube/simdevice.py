"""Virtual MindCube: scripted 20 Hz sensor streams with live panel overrides.

Scenarios are pure functions of (name, seed, frame index), so a given
scenario replays bit-identically.  A ``VirtualDevice`` layers panel
overrides on top: overridden channels win over the scenario until the
device is reset.
"""

from __future__ import annotations

import math
import queue
import threading
from dataclasses import dataclass, replace as _replace
from typing import Iterator, Optional

import numpy as np

from .wire import SensorFrame, encode_frame

SCENARIO_NAMES = ("idle", "fidget-burst", "tilt-sweep", "joystick-circle")

IDLE_NOISE_G = 0.002
BURST_NOISE_G = 0.15
BURST_GYRO_NOISE_DPS = 30.0
BURST_JOY = 0.8
TILT_AMPLITUDE_DEG = 80.0
TILT_FREQ_HZ = 0.1
CIRCLE_RADIUS = 0.8
CIRCLE_FREQ_HZ = 0.2

# static ambient field, raw counts (1 LSB = 0.15 uT)
_MAG_RAW = (150, -40, 310)


class UnknownScenario(Exception):
    """Scenario name is not one of the scripted set."""


class InvalidEvent(Exception):
    """Panel event failed validation."""


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int = 0
    duration_s: Optional[float] = None

    def __post_init__(self):
        if self.name not in SCENARIO_NAMES:
            raise UnknownScenario(f"{self.name!r}; expected one of {SCENARIO_NAMES}")


@dataclass(frozen=True)
class PanelEvent:
    """One control input from the browser panel.

    kind: button_down/button_up (index 1..4), joy_set (x, y in [-1,1]),
    encoder_step (step +/-1), orient_set (pitch/roll/yaw in degrees).
    """

    kind: str
    index: int = 0
    x: float = 0.0
    y: float = 0.0
    step: int = 0
    pitch_deg: float = 0.0
    roll_deg: float = 0.0
    yaw_deg: float = 0.0

    def validate(self) -> None:
        if self.kind in ("button_down", "button_up"):
            if not 1 <= self.index <= 4:
                raise InvalidEvent(f"button index {self.index} outside 1..4")
        elif self.kind == "joy_set":
            if not (abs(self.x) <= 1.0 and abs(self.y) <= 1.0):
                raise InvalidEvent(f"joy ({self.x}, {self.y}) outside [-1,1]")
        elif self.kind == "encoder_step":
            if self.step not in (-1, 1):
                raise InvalidEvent(f"encoder step {self.step} not +/-1")
        elif self.kind == "orient_set":
            for v in (self.pitch_deg, self.roll_deg, self.yaw_deg):
                if not math.isfinite(v):
                    raise InvalidEvent("orientation angle not finite")
        else:
            raise InvalidEvent(f"unknown event kind {self.kind!r}")

    @classmethod
    def from_dict(cls, payload: dict) -> "PanelEvent":
        if not isinstance(payload, dict) or "kind" not in payload:
            raise InvalidEvent("event must be an object with a 'kind' field")
        kind = payload["kind"]
        try:
            event = cls(
                kind=str(kind),
                index=int(payload.get("index", 0)),
                x=float(payload.get("x", 0.0)),
                y=float(payload.get("y", 0.0)),
                step=int(payload.get("step", 0)),
                pitch_deg=float(payload.get("pitch_deg", 0.0)),
                roll_deg=float(payload.get("roll_deg", 0.0)),
                yaw_deg=float(payload.get("yaw_deg", 0.0)),
            )
        except (TypeError, ValueError) as exc:
            raise InvalidEvent(f"bad event field: {exc}") from exc
        event.validate()
        return event


def _clamp_i16(v: float) -> int:
    return max(-32768, min(32767, int(round(v))))


def _clamp_i8(v: int) -> int:
    return max(-128, min(127, v))


def gravity_accel_g(pitch_deg: float, roll_deg: float) -> tuple[float, float, float]:
    """Body-frame gravity unit vector for a pitch/roll attitude (ZYX order)."""
    p = math.radians(pitch_deg)
    r = math.radians(roll_deg)
    return (-math.sin(p), math.sin(r) * math.cos(p), math.cos(r) * math.cos(p))


def _accel_raw(gvec: tuple[float, float, float], rng=None, noise_g: float = 0.0):
    g = np.asarray(gvec, dtype=float)
    if rng is not None and noise_g > 0.0:
        g = g + rng.normal(0.0, noise_g, 3)
    return tuple(_clamp_i16(v * 4096.0) for v in g)


def _tilt_pitch_deg(t: float) -> float:
    return TILT_AMPLITUDE_DEG * math.sin(2.0 * math.pi * TILT_FREQ_HZ * t)


def tilt_sweep_truth(frame_index: int, rate_hz: float = 20.0) -> tuple[float, float]:
    """Ground-truth (pitch_deg, roll_deg) of the tilt-sweep scenario."""
    return _tilt_pitch_deg(frame_index / rate_hz), 0.0


def step_scenario(scenario: Scenario, frame_index: int, rate_hz: float = 20.0) -> SensorFrame:
    """Sensor reading ``frame_index`` of a scripted scenario.

    Deterministic: the per-frame noise stream is derived from
    (seed, frame_index), so any frame can be regenerated in isolation.
    """
    if frame_index < 0:
        raise ValueError(f"frame_index {frame_index} must be >= 0")
    rng = np.random.default_rng((scenario.seed, frame_index))
    t = frame_index / rate_hz
    dt = 1.0 / rate_hz

    accel = _accel_raw((0.0, 0.0, 1.0), rng, IDLE_NOISE_G)
    gyro = (0, 0, 0)
    joy = (0, 0)
    buttons = 0
    encoder = 0

    if scenario.name == "idle":
        pass

    elif scenario.name == "fidget-burst":
        in_burst = int(t // 2.0) % 2 == 1  # 2 s idle, 2 s burst, repeating
        if in_burst:
            accel = _accel_raw((0.0, 0.0, 1.0), rng, BURST_NOISE_G)
            gyro = tuple(_clamp_i16(v * 16.4)
                         for v in rng.normal(0.0, BURST_GYRO_NOISE_DPS, 3))
            buttons = 0x0F if frame_index % 2 else 0x00
            jx = BURST_JOY if (frame_index // 4) % 2 == 0 else -BURST_JOY
            jy = BURST_JOY if ((frame_index + 2) // 4) % 2 == 0 else -BURST_JOY
            joy = (_clamp_i16(jx * 32767.0), _clamp_i16(jy * 32767.0))
            encoder = 127 if frame_index % 2 else -127

    elif scenario.name == "tilt-sweep":
        pitch = _tilt_pitch_deg(t)
        accel = _accel_raw(gravity_accel_g(pitch, 0.0), rng, IDLE_NOISE_G)
        # mean rate over the elapsed frame interval, so that rectangle-rule
        # integration of the gyro recovers the orientation exactly; frame 0
        # has no elapsed interval and reports zero rate
        rate_dps = 0.0 if frame_index == 0 else (pitch - _tilt_pitch_deg(t - dt)) / dt
        gyro = (0, _clamp_i16(rate_dps * 16.4), 0)

    elif scenario.name == "joystick-circle":
        phase = 2.0 * math.pi * CIRCLE_FREQ_HZ * t
        joy = (_clamp_i16(CIRCLE_RADIUS * math.cos(phase) * 32767.0),
               _clamp_i16(CIRCLE_RADIUS * math.sin(phase) * 32767.0))

    else:  # pragma: no cover - Scenario.__post_init__ rejects unknown names
        raise UnknownScenario(scenario.name)

    return SensorFrame(
        seq=frame_index % 256,
        timestamp_ms=int(round(frame_index * 1000.0 / rate_hz)) & 0xFFFFFFFF,
        accel=accel, gyro=gyro, mag=_MAG_RAW, joy=joy,
        buttons=buttons, encoder_delta=encoder,
    )


class VirtualDevice:
    """Scenario playback plus panel overrides; one frame producer at a time.

    Panel events arrive on a thread-safe queue and are drained at the top
    of every ``next_frame`` call, so an event submitted before frame n is
    visible in frame n.  Once a channel has been overridden it stays
    panel-controlled.
    """

    def __init__(self, scenario: Scenario, rate_hz: float = 20.0):
        if not 1.0 <= rate_hz <= 200.0:
            raise ValueError(f"rate_hz {rate_hz} outside [1, 200]")
        self.scenario = scenario
        self.rate_hz = rate_hz
        self.motor_pwm = 0  # modeled state only; never transmitted
        self._index = 0
        self._events: "queue.Queue[PanelEvent]" = queue.Queue()
        self._lock = threading.Lock()
        self._held_buttons: set[int] = set()
        self._buttons_overridden = False
        self._joy_override: Optional[tuple[float, float]] = None
        self._encoder_overridden = False
        self._encoder_pending = 0
        self._orient: Optional[tuple[float, float, float]] = None
        self._orient_prev: Optional[tuple[float, float, float]] = None

    def apply_panel_event(self, event: PanelEvent) -> None:
        """Queue a validated panel event for the next frame."""
        event.validate()
        self._events.put(event)

    def _drain_events(self) -> None:
        while True:
            try:
                ev = self._events.get_nowait()
            except queue.Empty:
                return
            if ev.kind == "button_down":
                self._held_buttons.add(ev.index)
                self._buttons_overridden = True
            elif ev.kind == "button_up":
                self._held_buttons.discard(ev.index)
                self._buttons_overridden = True
            elif ev.kind == "joy_set":
                self._joy_override = (ev.x, ev.y)
            elif ev.kind == "encoder_step":
                self._encoder_pending += ev.step
                self._encoder_overridden = True
            elif ev.kind == "orient_set":
                self._orient_prev = self._orient
                self._orient = (ev.pitch_deg, ev.roll_deg, ev.yaw_deg)

    def next_frame(self) -> SensorFrame:
        with self._lock:
            self._drain_events()
            frame = step_scenario(self.scenario, self._index, self.rate_hz)
            dt = 1.0 / self.rate_hz

            if self._buttons_overridden:
                mask = 0
                for idx in self._held_buttons:
                    mask |= 1 << (idx - 1)
                frame = _replace(frame, buttons=mask)
            if self._joy_override is not None:
                jx, jy = self._joy_override
                frame = _replace(frame, joy=(_clamp_i16(jx * 32767.0),
                                             _clamp_i16(jy * 32767.0)))
            if self._encoder_overridden:
                frame = _replace(frame, encoder_delta=_clamp_i8(self._encoder_pending))
                self._encoder_pending = 0
            if self._orient is not None:
                pitch, roll, yaw = self._orient
                prev = self._orient_prev if self._orient_prev is not None else self._orient
                rates = tuple((a - b) / dt for a, b in zip(self._orient, prev))
                frame = _replace(
                    frame,
                    accel=_accel_raw(gravity_accel_g(pitch, roll)),
                    gyro=(_clamp_i16(rates[1] * 16.4),   # roll rate on x
                          _clamp_i16(rates[0] * 16.4),   # pitch rate on y
                          _clamp_i16(rates[2] * 16.4)),  # yaw rate on z
                )
                self._orient_prev = self._orient

            self._index += 1
            return frame

    def frames(self, count: Optional[int] = None) -> Iterator[SensorFrame]:
        """Yield frames; bounded by ``count`` and the scenario duration."""
        limit = None
        if self.scenario.duration_s is not None:
            limit = int(self.scenario.duration_s * self.rate_hz)
        produced = 0
        while True:
            if count is not None and produced >= count:
                return
            if limit is not None and self._index >= limit:
                return
            yield self.next_frame()
            produced += 1

    def packets(self, count: Optional[int] = None) -> Iterator[bytes]:
        """Framed wire packets, indistinguishable from a physical feed."""
        for frame in self.frames(count):
            yield encode_frame(frame)
