"""Complementary-filter attitude estimation from accelerometer + gyroscope.

Gyro integration supplies the high-frequency attitude changes, the
accelerometer's gravity direction supplies the low-frequency reference:

    angle = alpha * (angle + gyro_rate * dt) + (1 - alpha) * accel_angle

When gravity is unobservable (free fall, hard shake) the step falls back
to gyro-only integration.  Yaw is not estimated; the magnetometer is
unused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .wire import SensorFrame

DEFAULT_ALPHA = 0.98
_MIN_ACCEL_G = 0.1


class DegenerateAccel(Exception):
    """Accelerometer magnitude too small for gravity to be observable."""


@dataclass(frozen=True)
class Attitude:
    """Fused pitch/roll, radians.  pitch in [-pi/2, pi/2], roll in (-pi, pi]."""

    pitch: float = 0.0
    roll: float = 0.0
    updated_at: int = 0


def accel_attitude(accel_g: tuple[float, float, float]) -> tuple[float, float]:
    """(pitch, roll) implied by a gravity-dominated accelerometer reading."""
    ax, ay, az = accel_g
    if math.sqrt(ax * ax + ay * ay + az * az) <= _MIN_ACCEL_G:
        raise DegenerateAccel(f"|accel| <= {_MIN_ACCEL_G} g")
    pitch = math.atan2(-ax, math.sqrt(ay * ay + az * az))
    roll = math.atan2(ay, az)
    return pitch, roll


def _clamp_pitch(p: float) -> float:
    return max(-math.pi / 2, min(math.pi / 2, p))


def _wrap_roll(r: float) -> float:
    r = math.fmod(r + math.pi, 2.0 * math.pi)
    if r < 0:
        r += 2.0 * math.pi
    r -= math.pi
    return math.pi if r == -math.pi else r


def fuse_step(state: Attitude, frame: SensorFrame, dt: float,
              alpha: float = DEFAULT_ALPHA) -> Attitude:
    """Advance the filter by one frame.

    dt must be in (0, 1] seconds.  A degenerate accelerometer reading is
    handled internally by integrating the gyro alone for this step.
    """
    if not 0.0 < dt <= 1.0:
        raise ValueError(f"dt {dt} outside (0, 1]")
    if not (math.isfinite(state.pitch) and math.isfinite(state.roll)):
        raise ValueError("filter state is not finite")

    gx, gy, gz = frame.gyro_dps()
    pitch_gyro = state.pitch + math.radians(gy) * dt
    roll_gyro = state.roll + math.radians(gx) * dt

    try:
        pitch_acc, roll_acc = accel_attitude(frame.accel_g())
    except DegenerateAccel:
        pitch, roll = pitch_gyro, roll_gyro
    else:
        pitch = alpha * pitch_gyro + (1.0 - alpha) * pitch_acc
        roll = alpha * roll_gyro + (1.0 - alpha) * roll_acc

    return Attitude(pitch=_clamp_pitch(pitch), roll=_wrap_roll(roll),
                    updated_at=frame.timestamp_ms)


class AttitudeTracker:
    """Single-owner filter instance for one device stream."""

    def __init__(self, alpha: float = DEFAULT_ALPHA, rate_hz: float = 20.0):
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha {alpha} outside (0, 1)")
        self.alpha = alpha
        self.dt = 1.0 / rate_hz
        self.state = Attitude()

    def update(self, frame: SensorFrame) -> Attitude:
        self.state = fuse_step(self.state, frame, self.dt, self.alpha)
        return self.state

    def reset(self) -> None:
        self.state = Attitude()
