"""Conditioned latent-sequence generation.

Latent sequences are arrays of shape (length, dim), dim 4 by default.
Sampling is a deterministic, seed-reproducible reverse-diffusion pass
parameterized by a cosine cumulative-noise schedule: each step forms an
epsilon prediction (classifier-free guided when a condition is present),
converts it to a clean-sequence estimate, and steps to the next noise
level; a second-order (Heun) correction keeps the 30-step marginals
accurate.  Outpainting re-noises a fixed prefix into every intermediate
step and writes it back exactly at the end.

The denoiser is pluggable.  Analytic Gaussian denoisers are provided both
as verification oracles and as the default generator: they are the
closed-form optimal predictors for Gaussian data laws, so sampler output
statistics can be checked against exact targets.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .conditioning import Condition

LATENT_DIM = 4
DEFAULT_LENGTH = 512
DEFAULT_STEPS = 30
DEFAULT_GAMMA = 1.5
DEFAULT_KEEP = 64

MCLZ_MAGIC = b"MCLZ"
MCLZ_VERSION = 0x01

# Heun corrector applies only when the per-step noise-scale ratio is at most
# this; larger steps sit in the multiplicative near-pure-noise regime where
# the plain step is more accurate than a trapezoid slope average.
_HEUN_RATIO_CAP = 3.0


class InvalidSteps(Exception):
    """Schedule step count outside [1, 1000]."""


class ShapeMismatch(Exception):
    """Latent/epsilon arrays disagree in shape."""


class PrefixTooLong(Exception):
    """Outpainting prefix does not fit the requested length."""


class NonFiniteDetected(Exception):
    """A sampling intermediate went NaN/inf; generation aborted."""


class SingularStep(Exception):
    """Oracle epsilon is undefined at cumulative noise level 1 (t=0)."""


class LatentFileError(Exception):
    """Latent file is not valid MCLZ."""


@dataclass(frozen=True)
class Schedule:
    """Cumulative noise levels alpha_bar[0..steps], 1.0 down to ~0."""

    steps: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        self.alpha_bar.flags.writeable = False


@dataclass(frozen=True)
class GuidanceConfig:
    gamma: float = DEFAULT_GAMMA
    condition: Optional[Condition] = None

    def __post_init__(self):
        if not math.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma {self.gamma} must be finite and >= 0")


class Denoiser(Protocol):
    """Epsilon predictor; condition None means the unconditional model."""

    def predict_eps(self, z_t: np.ndarray, t: int,
                    condition: Optional[Condition]) -> np.ndarray: ...


def make_schedule(steps: int = DEFAULT_STEPS) -> Schedule:
    """Cosine cumulative-noise schedule with strictly decreasing levels."""
    if not isinstance(steps, int) or not 1 <= steps <= 1000:
        raise InvalidSteps(f"steps {steps!r} outside [1, 1000]")
    s = 0.008
    x = (np.arange(steps + 1) / steps + s) / (1.0 + s) * (math.pi / 2.0)
    ab = np.cos(x) ** 2
    ab = ab / ab[0]
    # keep the tail strictly positive and the whole sequence strictly decreasing
    for i in range(1, steps + 1):
        ab[i] = min(ab[i], ab[i - 1] * 0.9999)
        ab[i] = max(ab[i], ab[i - 1] * 1e-3)
    ab[0] = 1.0
    return Schedule(steps=steps, alpha_bar=ab)


def cfg_epsilon(eps_uncond: np.ndarray, eps_cond: np.ndarray,
                gamma: float) -> np.ndarray:
    """Classifier-free-guided combination (1-gamma)*uncond + gamma*cond."""
    eps_uncond = np.asarray(eps_uncond, dtype=float)
    eps_cond = np.asarray(eps_cond, dtype=float)
    if eps_uncond.shape != eps_cond.shape:
        raise ShapeMismatch(
            f"eps shapes differ: {eps_uncond.shape} vs {eps_cond.shape}")
    return (1.0 - gamma) * eps_uncond + gamma * eps_cond


def gaussian_oracle_eps(z_t: np.ndarray, alpha_bar: float, mu, sigma) -> np.ndarray:
    """Optimal epsilon prediction when the data law is N(mu, sigma^2 I).

    mu and sigma may be scalars or per-channel vectors.  With a = alpha_bar:

        E[z0|z_t] = mu + (sqrt(a) sigma^2 / (a sigma^2 + 1 - a)) (z_t - sqrt(a) mu)
        eps_hat   = (z_t - sqrt(a) E[z0|z_t]) / sqrt(1 - a)
    """
    if alpha_bar >= 1.0:
        raise SingularStep("alpha_bar = 1 (t = 0) has no epsilon")
    z_t = np.asarray(z_t, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    a = float(alpha_bar)
    root_a = math.sqrt(a)
    var = sigma * sigma
    gain = root_a * var / (a * var + 1.0 - a)
    posterior_mean = mu + gain * (z_t - root_a * mu)
    return (z_t - root_a * posterior_mean) / math.sqrt(1.0 - a)


class GaussianOracleDenoiser:
    """Verification denoiser: unconditional Gaussian data N(mu, sigma^2 I)."""

    def __init__(self, schedule: Schedule, mu=0.0, sigma=1.0):
        self.schedule = schedule
        self.mu = mu
        self.sigma = sigma

    def predict_eps(self, z_t, t, condition=None):
        return gaussian_oracle_eps(z_t, self.schedule.alpha_bar[t], self.mu, self.sigma)


class EnergyCodedDenoiser:
    """Default generator: the condition sets the mean of the energy channel.

    Unconditionally every channel is N(0, 1).  Conditioned on c, the
    energy channel (the renderer's amplitude input, index 2) is
    N(2c - 1, energy_sigma^2), so generated loudness tracks c.
    """

    def __init__(self, schedule: Schedule, dim: int = LATENT_DIM,
                 energy_channel: int = 2, energy_sigma: float = 0.1):
        if not 0 <= energy_channel < dim:
            raise ValueError(f"energy_channel {energy_channel} outside 0..{dim - 1}")
        self.schedule = schedule
        self.dim = dim
        self.energy_channel = energy_channel
        self.energy_sigma = energy_sigma

    def predict_eps(self, z_t, t, condition=None):
        ab = self.schedule.alpha_bar[t]
        if condition is None:
            return gaussian_oracle_eps(z_t, ab, 0.0, 1.0)
        mu = np.zeros(self.dim)
        sigma = np.ones(self.dim)
        mu[self.energy_channel] = 2.0 * condition.value - 1.0
        sigma[self.energy_channel] = self.energy_sigma
        return gaussian_oracle_eps(z_t, ab, mu, sigma)


def _guided_eps(denoiser: Denoiser, z: np.ndarray, t: int,
                guidance: Optional[GuidanceConfig]) -> np.ndarray:
    if guidance is None or guidance.condition is None:
        eps = np.asarray(denoiser.predict_eps(z, t, None), dtype=float)
        if eps.shape != z.shape:
            raise ShapeMismatch(f"denoiser returned {eps.shape}, expected {z.shape}")
        return eps
    eps_u = np.asarray(denoiser.predict_eps(z, t, None), dtype=float)
    eps_c = np.asarray(denoiser.predict_eps(z, t, guidance.condition), dtype=float)
    if eps_u.shape != z.shape or eps_c.shape != z.shape:
        raise ShapeMismatch("denoiser epsilon shape does not match latents")
    return cfg_epsilon(eps_u, eps_c, guidance.gamma)


def sample(denoiser: Denoiser, schedule: Schedule,
           guidance: Optional[GuidanceConfig] = None,
           length: int = DEFAULT_LENGTH,
           prefix: Optional[np.ndarray] = None,
           seed: int = 0, dim: int = LATENT_DIM) -> np.ndarray:
    """Generate a latent sequence; deterministic for fixed inputs and seed.

    The reverse pass runs from seeded standard normal noise.  Each step is
    an epsilon-based update to the next cumulative noise level with a Heun
    corrector (plain step for the final level, where the corrector's
    second prediction is undefined).  With a prefix, rows [0, K) are
    overwritten at every level with the prefix re-noised to that level and
    set to the prefix exactly at the end.
    """
    if length < 1:
        raise ValueError(f"length {length} must be >= 1")
    keep = 0
    if prefix is not None:
        prefix = np.asarray(prefix, dtype=float)
        if prefix.ndim != 2 or prefix.shape[1] != dim:
            raise ShapeMismatch(f"prefix shape {prefix.shape}, expected (K, {dim})")
        keep = prefix.shape[0]
        if keep >= length:
            raise PrefixTooLong(f"prefix of {keep} rows must be shorter than {length}")

    rng = np.random.default_rng(seed)
    ab = schedule.alpha_bar
    z = rng.standard_normal((length, dim))

    # The update integrates the deterministic reverse flow in the scaled
    # coordinates u = z / sqrt(ab), tau = sqrt(1 - ab) / sqrt(ab), where the
    # plain update is the Euler step u' = u + (tau' - tau) * eps.  A Heun
    # corrector (averaging eps with a re-prediction at the new level) removes
    # most of the few-step discretization bias.  The corrector is skipped
    # where it cannot apply or would hurt: at the final level (no epsilon is
    # defined there) and on steps whose noise-scale ratio exceeds
    # _HEUN_RATIO_CAP, i.e. the near-pure-noise region where the flow is
    # multiplicative and the plain step is already near-exact.
    for t in range(schedule.steps, 0, -1):
        a = ab[t]
        a_prev = ab[t - 1]
        if keep:
            z[:keep] = (math.sqrt(a) * prefix
                        + math.sqrt(1.0 - a) * rng.standard_normal((keep, dim)))
        tau = math.sqrt((1.0 - a) / a)
        tau_prev = math.sqrt((1.0 - a_prev) / a_prev)
        u = z / math.sqrt(a)
        eps = _guided_eps(denoiser, z, t, guidance)
        z_next = math.sqrt(a_prev) * (u + (tau_prev - tau) * eps)
        if t > 1 and tau <= _HEUN_RATIO_CAP * tau_prev:
            eps2 = _guided_eps(denoiser, z_next, t - 1, guidance)
            z_next = math.sqrt(a_prev) * (
                u + (tau_prev - tau) * 0.5 * (eps + eps2))
        z = z_next
        if not np.isfinite(z).all():
            raise NonFiniteDetected(f"non-finite latent at step {t}")

    if keep:
        z[:keep] = prefix
    return z


def outpaint_continuation(previous: np.ndarray, keep: int = DEFAULT_KEEP,
                          *, denoiser: Denoiser, schedule: Schedule,
                          guidance: Optional[GuidanceConfig] = None,
                          length: int = DEFAULT_LENGTH, seed: int = 0,
                          dim: int = LATENT_DIM) -> np.ndarray:
    """Continue ``previous``: its last ``keep`` rows seed the new sequence."""
    previous = np.asarray(previous, dtype=float)
    if keep < 0 or keep > previous.shape[0]:
        raise PrefixTooLong(
            f"keep {keep} outside 0..{previous.shape[0]} (previous length)")
    prefix = previous[-keep:] if keep > 0 else None
    return sample(denoiser, schedule, guidance, length=length,
                  prefix=prefix, seed=seed, dim=dim)


def save_mclz(path, latents: np.ndarray) -> None:
    """Write latents as MCLZ: magic, version, u32 length, u8 dim, f32 data."""
    latents = np.asarray(latents)
    if latents.ndim != 2:
        raise ShapeMismatch(f"latents shape {latents.shape}, expected 2-D")
    length, dim = latents.shape
    if dim > 255:
        raise ShapeMismatch(f"dim {dim} exceeds u8")
    with open(path, "wb") as fh:
        fh.write(MCLZ_MAGIC)
        fh.write(struct.pack("<BIB", MCLZ_VERSION, length, dim))
        fh.write(np.ascontiguousarray(latents, dtype="<f4").tobytes())


def load_mclz(path) -> np.ndarray:
    """Read an MCLZ latent file back as a float32 (length, dim) array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header = struct.calcsize("<BIB")
    if len(blob) < len(MCLZ_MAGIC) + header:
        raise LatentFileError("file truncated before header end")
    if blob[:4] != MCLZ_MAGIC:
        raise LatentFileError(f"bad magic {blob[:4]!r}")
    version, length, dim = struct.unpack_from("<BIB", blob, 4)
    if version != MCLZ_VERSION:
        raise LatentFileError(f"unsupported version {version}")
    payload = blob[4 + header:]
    expected = length * dim * 4
    if len(payload) != expected:
        raise LatentFileError(f"payload {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(length, dim)
    return data.copy()
