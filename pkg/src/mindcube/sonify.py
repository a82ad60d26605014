"""Latents to audio, and fused sensor state to control-voltage frames.

The renderer is a toy additive synth standing in for a learned decoder,
with a deliberate channel map so conditioning stays observable:

    z1  fundamental: 220 * 2**z1 Hz, clamped to [55, 880]
    z2  brightness: harmonics 1..8 with rolloff exponent softplus(z2)
    z3  amplitude: sigmoid(z3)
    z4  stereo width / noise mix: u = sigmoid(z4); width = min(1, 2u),
        noise mix = max(0, 2u - 1)  (u <= 0.5 widens, u > 0.5 adds noise)

Parameters interpolate linearly across each hop of 2048 samples, so 512
latent frames render to exactly 1,048,576 samples (~23.78 s at 44.1 kHz).

The hot per-sample loop lives in a compiled kernel when available
(``mindcube._synth``); a numpy fallback is selected at import otherwise.
Set MINDCUBE_RENDER_BACKEND=python|compiled to force one.
"""

from __future__ import annotations

import math
import os
import wave
from dataclasses import dataclass

import numpy as np

from .conditioning import Condition
from .fusion import Attitude
from .wire import SensorFrame

SAMPLE_RATE = 44100
DEFAULT_HOP = 2048
FREQ_BASE_HZ = 220.0
FREQ_MIN_HZ = 55.0
FREQ_MAX_HZ = 880.0
GATE_V = 10.0
BIPOLAR_V = 5.0
UNIPOLAR_V = 10.0
ENCODER_STEPS = 16

# samples per numpy call on the audio path: keeps every single call short so
# the 20 Hz control thread is never starved of the interpreter lock
_NOISE_CHUNK = 1 << 17


class EmptyLatents(Exception):
    """Renderer needs at least one latent frame."""


class EmptyBuffer(Exception):
    """RMS of an empty buffer is undefined."""


def _select_backend():
    forced = os.environ.get("MINDCUBE_RENDER_BACKEND", "").strip().lower()
    if forced == "python":
        from . import _synth_np
        return _synth_np, "python"
    try:
        from . import _synth
        return _synth, "compiled"
    except ImportError:
        if forced == "compiled":
            raise
        from . import _synth_np
        return _synth_np, "python"


_BACKEND, RENDER_BACKEND = _select_backend()


@dataclass(frozen=True)
class AudioBuffer:
    """Stereo float32 samples, shape (n, 2), limited to [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softplus(x):
    return np.logaddexp(0.0, x)


def frame_parameters(latents: np.ndarray):
    """Per-frame synth parameters (freq, harmonic weights, amp, width, mix)."""
    z = np.asarray(latents, dtype=float)
    freq = np.clip(FREQ_BASE_HZ * np.exp2(z[:, 0]), FREQ_MIN_HZ, FREQ_MAX_HZ)
    rolloff = _softplus(z[:, 1])
    harmonics = np.arange(1, 9, dtype=float)
    weights = harmonics[None, :] ** -rolloff[:, None]
    weights /= weights.sum(axis=1, keepdims=True)
    amp = _sigmoid(z[:, 2])
    u = _sigmoid(z[:, 3])
    width = np.minimum(1.0, 2.0 * u)
    nmix = np.maximum(0.0, 2.0 * u - 1.0)
    return freq, weights, amp, width, nmix


def render_latents(latents: np.ndarray, hop: int = DEFAULT_HOP,
                   sample_rate: int = SAMPLE_RATE, noise_seed: int = 0,
                   backend=None) -> AudioBuffer:
    """Render a latent sequence to stereo audio, len(latents) * hop samples."""
    z = np.asarray(latents, dtype=float)
    if z.ndim != 2 or z.shape[0] == 0:
        raise EmptyLatents(f"latents shape {z.shape}; need (frames, dim)")
    if z.shape[1] < 4:
        raise EmptyLatents(f"latents need >= 4 channels, got {z.shape[1]}")
    if hop < 1:
        raise ValueError(f"hop {hop} must be >= 1")

    freq, weights, amp, width, nmix = frame_parameters(z)

    def extend(a):
        return np.ascontiguousarray(np.concatenate([a, a[-1:]]), dtype=float)

    # filled in slices so no single call pins the interpreter lock for long;
    # the draw sequence is identical to one bulk call
    rng = np.random.default_rng(noise_seed)
    total = z.shape[0] * hop
    noise = np.empty((total, 2))
    for start in range(0, total, _NOISE_CHUNK):
        stop = min(start + _NOISE_CHUNK, total)
        noise[start:stop] = rng.uniform(-1.0, 1.0, (stop - start, 2))
    mod = _BACKEND if backend is None else backend
    samples = mod.synth_core(extend(freq), extend(weights), extend(amp),
                             extend(width), extend(nmix), noise,
                             hop, float(sample_rate))
    return AudioBuffer(samples=samples, sample_rate=sample_rate)


def audio_rms(buffer: AudioBuffer) -> float:
    """Root-mean-square over both channels."""
    if buffer.samples.size == 0:
        raise EmptyBuffer("no samples")
    flat = buffer.samples.reshape(-1)
    total = 0.0
    for start in range(0, flat.size, _NOISE_CHUNK):
        chunk = flat[start:start + _NOISE_CHUNK].astype(np.float64)
        total += float(np.dot(chunk, chunk))
    return math.sqrt(total / flat.size)


def write_wav(path, buffer: AudioBuffer) -> None:
    """Write 16-bit PCM stereo WAV."""
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(2)
        fh.setsampwidth(2)
        fh.setframerate(buffer.sample_rate)
        samples = buffer.samples
        for start in range(0, len(samples), _NOISE_CHUNK):
            seg = np.clip(samples[start:start + _NOISE_CHUNK], -1.0, 1.0)
            fh.writeframes((seg * 32767.0).astype("<i2").tobytes())


@dataclass(frozen=True)
class ControlFrame:
    """One line of the CSV control-voltage stream.  Exactly 12 fields."""

    seq: int
    pitch_v: float
    roll_v: float
    joy_x_v: float
    joy_y_v: float
    gate1: float
    gate2: float
    gate3: float
    gate4: float
    encoder_step_v: float
    activity_v: float
    condition_v: float


def _clamp(v, lo, hi):
    return max(lo, min(hi, v))


def control_frame(attitude: Attitude, frame: SensorFrame, activity: float,
                  condition: Condition, encoder_position: int = 0) -> ControlFrame:
    """Map fused state + raw frame to synth-host voltages.

    Pitch/roll map [-90, +90] degrees to [-5, +5] V; joystick axes to
    [-5, 5] V; pressed buttons gate at 10 V; the running encoder position
    (caller-accumulated, mod 16) maps to a 16-position staircase on
    [0, 10] V; activity and condition scale to [0, 10] V.
    """
    pitch_deg = math.degrees(attitude.pitch)
    roll_deg = math.degrees(attitude.roll)
    jx, jy = frame.joy_xy()
    pos = encoder_position % ENCODER_STEPS
    return ControlFrame(
        seq=frame.seq,
        pitch_v=_clamp(pitch_deg / 90.0 * BIPOLAR_V, -BIPOLAR_V, BIPOLAR_V),
        roll_v=_clamp(roll_deg / 90.0 * BIPOLAR_V, -BIPOLAR_V, BIPOLAR_V),
        joy_x_v=_clamp(jx * BIPOLAR_V, -BIPOLAR_V, BIPOLAR_V),
        joy_y_v=_clamp(jy * BIPOLAR_V, -BIPOLAR_V, BIPOLAR_V),
        gate1=GATE_V if frame.button_pressed(1) else 0.0,
        gate2=GATE_V if frame.button_pressed(2) else 0.0,
        gate3=GATE_V if frame.button_pressed(3) else 0.0,
        gate4=GATE_V if frame.button_pressed(4) else 0.0,
        encoder_step_v=pos / (ENCODER_STEPS - 1) * UNIPOLAR_V,
        activity_v=_clamp(activity, 0.0, 1.0) * UNIPOLAR_V,
        condition_v=condition.value * UNIPOLAR_V,
    )


def serialize_csv(cf: ControlFrame) -> str:
    """12 comma-separated fields, 4 fractional digits, newline-terminated."""
    return (f"{cf.seq},{cf.pitch_v:.4f},{cf.roll_v:.4f},"
            f"{cf.joy_x_v:.4f},{cf.joy_y_v:.4f},"
            f"{cf.gate1:.4f},{cf.gate2:.4f},{cf.gate3:.4f},{cf.gate4:.4f},"
            f"{cf.encoder_step_v:.4f},{cf.activity_v:.4f},{cf.condition_v:.4f}\n")


def parse_csv_line(line: str) -> ControlFrame:
    """Inverse of serialize_csv (to the serialized precision)."""
    parts = line.strip().split(",")
    if len(parts) != 12:
        raise ValueError(f"expected 12 fields, got {len(parts)}")
    return ControlFrame(int(parts[0]), *(float(p) for p in parts[1:]))
