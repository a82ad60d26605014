"""Activity score and diffusion conditioning value from a window of frames.

The score is the weighted per-channel population standard deviation over a
moving window, scaled by a normalizer and clamped to [0, 1]:

    score = clamp((w[0]*sigma[0] + ... + w[15]*sigma[15]) / R, 0, 1)

Channel order is fixed: [ax, ay, az, gx, gy, gz, mx, my, mz, jx, jy,
b1, b2, b3, b4, enc].  Per-channel unit normalization:

    accel    raw / 32768.0        (raw/4096 g, full scale 8 g)
    gyro     raw / 32800.0        (raw/16.4 deg/s, full scale 2000 deg/s)
    mag      (raw * 0.15) / 4900.0
    joy      raw / 32767.0
    buttons  0 or 1 per bit
    encoder  raw / 127.0

The per-channel deviation is computed exactly, in a pinned order that is
part of the contract (so independent reimplementations produce
bit-identical scores, a constant channel scores exactly zero, and integer
shifts of a channel leave its sigma bit-identical):

    e[i]   = raw[i] - raw[0]            (exact integer delta)
    u[i]   = normalize(e[i])            (formulas above, applied to the delta)
    mean   = (u[0] + u[1] + ... ) / n   (sequential sum)
    var    = ((u[0]-mean)^2 + ... ) / n (sequential sum)
    sigma  = sqrt(var)
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .wire import SensorFrame

CHANNEL_NAMES = ("ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz",
                 "jx", "jy", "b1", "b2", "b3", "b4", "enc")
NUM_CHANNELS = 16

# accel 1.0 x3, gyro 0.2 x3, mag 0.05 x3, joy 1.0 x2, buttons 1.0 x4, enc 1.0
DEFAULT_WEIGHTS = (1.0, 1.0, 1.0, 0.2, 0.2, 0.2, 0.05, 0.05, 0.05,
                   1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


class WindowTooShort(Exception):
    """Window does not contain exactly window_frames frames."""


@dataclass(frozen=True)
class ActivityConfig:
    window_frames: int = 60
    weights: tuple[float, ...] = DEFAULT_WEIGHTS
    normalizer: float = 6.0
    polarity: str = "inverse"

    def __post_init__(self):
        if self.window_frames < 2:
            raise ValueError(f"window_frames {self.window_frames} must be >= 2")
        if len(self.weights) != NUM_CHANNELS:
            raise ValueError(f"need {NUM_CHANNELS} weights, got {len(self.weights)}")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be >= 0")
        if not any(w > 0 for w in self.weights):
            raise ValueError("at least one weight must be > 0")
        if self.normalizer <= 0:
            raise ValueError(f"normalizer {self.normalizer} must be > 0")
        if self.polarity not in ("direct", "inverse"):
            raise ValueError(f"polarity {self.polarity!r} not direct/inverse")

    @classmethod
    def from_mapping(cls, conf: dict) -> "ActivityConfig":
        """Build from flat ``activity.*`` keys of a key=value config file."""
        kw = {}
        if "activity.window_frames" in conf:
            kw["window_frames"] = int(conf["activity.window_frames"])
        if "activity.weights" in conf:
            parts = str(conf["activity.weights"]).split(",")
            kw["weights"] = tuple(float(p) for p in parts)
        if "activity.normalizer" in conf:
            kw["normalizer"] = float(conf["activity.normalizer"])
        if "activity.polarity" in conf:
            kw["polarity"] = str(conf["activity.polarity"]).strip()
        return cls(**kw)


@dataclass(frozen=True)
class ChannelStats:
    """Population standard deviation per channel, unit-normalized."""

    sigma: tuple[float, ...]


@dataclass(frozen=True)
class Condition:
    """Diffusion conditioning scalar, clamped to [0, 1]."""

    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("condition value must be finite")
        object.__setattr__(self, "value", min(1.0, max(0.0, self.value)))


def frame_raw_channels(frame: SensorFrame) -> list[int]:
    """The sixteen raw integer channel values of one frame, in fixed order."""
    return [
        *frame.accel, *frame.gyro, *frame.mag, *frame.joy,
        frame.buttons & 1, frame.buttons >> 1 & 1,
        frame.buttons >> 2 & 1, frame.buttons >> 3 & 1,
        frame.encoder_delta,
    ]


def frame_channels(frame: SensorFrame) -> list[float]:
    """The sixteen unit-normalized channel values of one frame."""
    raw = frame_raw_channels(frame)
    return [_normalize(ch, v) for ch, v in enumerate(raw)]


def _normalize(channel: int, value: int) -> float:
    if channel < 3:
        return value / 32768.0
    if channel < 6:
        return value / 32800.0
    if channel < 9:
        return (value * 0.15) / 4900.0
    if channel < 11:
        return value / 32767.0
    if channel < 15:
        return float(value)
    return value / 127.0


def channel_std(window: Sequence[SensorFrame], config: ActivityConfig) -> ChannelStats:
    """Per-channel population standard deviation over one full window."""
    if len(window) != config.window_frames:
        raise WindowTooShort(
            f"window has {len(window)} frames, config requires {config.window_frames}")
    rows = [frame_raw_channels(f) for f in window]
    n = len(window)
    sigma = []
    for ch in range(NUM_CHANNELS):
        first = rows[0][ch]
        devs = [_normalize(ch, row[ch] - first) for row in rows]
        total = 0.0
        for u in devs:
            total += u
        mean = total / n
        sq = 0.0
        for u in devs:
            d = u - mean
            sq += d * d
        sigma.append(math.sqrt(sq / n))
    return ChannelStats(sigma=tuple(sigma))


def activity_score(stats: ChannelStats, config: ActivityConfig) -> float:
    """Weighted channel deviations, normalized and clamped to [0, 1]."""
    total = 0.0
    for w, s in zip(config.weights, stats.sigma):
        total += w * s
    score = total / config.normalizer
    return min(1.0, max(0.0, score))


def rms_condition(activity: float, config: ActivityConfig) -> Condition:
    """Map activity to the conditioning value.

    Inverse polarity drives loud generation when activity is low and quiet
    generation when activity is high; direct passes activity through.
    """
    if not 0.0 <= activity <= 1.0:
        raise ValueError(f"activity {activity} outside [0, 1]")
    if config.polarity == "inverse":
        return Condition(1.0 - activity)
    return Condition(activity)


def window_condition(window: Sequence[SensorFrame], config: ActivityConfig
                     ) -> tuple[float, Condition]:
    """(activity, condition) of one window; the full formula in one call."""
    score = activity_score(channel_std(window, config), config)
    return score, rms_condition(score, config)


@dataclass
class ActivityWindow:
    """Fixed-size frame ring owned by the stream consumer.

    ``snapshot`` returns an immutable copy safe to hand to other threads.
    """

    config: ActivityConfig = field(default_factory=ActivityConfig)

    def __post_init__(self):
        self._ring: deque[SensorFrame] = deque(maxlen=self.config.window_frames)

    def push(self, frame: SensorFrame) -> None:
        self._ring.append(frame)

    def extend(self, frames: Iterable[SensorFrame]) -> None:
        for f in frames:
            self.push(f)

    @property
    def ready(self) -> bool:
        return len(self._ring) == self.config.window_frames

    def snapshot(self) -> tuple[SensorFrame, ...]:
        if not self.ready:
            raise WindowTooShort(
                f"ring holds {len(self._ring)} of {self.config.window_frames} frames")
        return tuple(self._ring)
