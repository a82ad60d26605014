"""Pure-numpy additive-synthesis core; fallback for the compiled kernel.

Semantics are shared with ``_synth.pyx``: per-sample linear interpolation
of per-frame parameters, a phase-continuous 8-harmonic oscillator with a
width-controlled right-channel phase spread, a noise mix, and a soft
limiter that is transparent below 0.95.  Parameter arrays carry one extra
trailing row (the last frame repeated) so interpolation never reads past
the end.
"""

import numpy as np

NUM_HARMONICS = 8
LIMIT_KNEE = 0.95
# fixed per-harmonic right-channel phase offsets (golden-angle multiples)
PHASE_OFFSETS = np.array([2.399963229728653 * (h + 1) for h in range(NUM_HARMONICS)])

_CHUNK_FRAMES = 64


def _soft_limit(x: np.ndarray) -> np.ndarray:
    over = np.abs(x) > LIMIT_KNEE
    if not over.any():
        return x
    span = 1.0 - LIMIT_KNEE
    limited = np.sign(x) * (LIMIT_KNEE + span * np.tanh((np.abs(x) - LIMIT_KNEE) / span))
    return np.where(over, limited, x)


def synth_core(freq, weights, amp, width, nmix, noise, hop, sample_rate):
    """Render (num_frames * hop, 2) float32 samples.

    freq/amp/width/nmix: (num_frames + 1,) float64; weights:
    (num_frames + 1, 8) float64; noise: (num_frames * hop, 2) float64 in
    [-1, 1].
    """
    num_frames = len(freq) - 1
    total = num_frames * hop
    out = np.empty((total, 2), dtype=np.float32)
    frac = np.arange(hop) / hop
    phase_carry = 0.0

    for start in range(0, num_frames, _CHUNK_FRAMES):
        stop = min(start + _CHUNK_FRAMES, num_frames)
        nf = stop - start
        lo = np.repeat(np.arange(start, stop), hop)
        fr = np.tile(frac, nf)

        f = freq[lo] + (freq[lo + 1] - freq[lo]) * fr
        a = amp[lo] + (amp[lo + 1] - amp[lo]) * fr
        w = width[lo] + (width[lo + 1] - width[lo]) * fr
        n = nmix[lo] + (nmix[lo + 1] - nmix[lo]) * fr

        # theta[i] is the phase *before* advancing by sample i's frequency
        step = 2.0 * np.pi * f / sample_rate
        theta = phase_carry + np.concatenate(([0.0], np.cumsum(step[:-1])))
        phase_carry = theta[-1] + step[-1]

        tone_l = np.zeros(nf * hop)
        tone_r = np.zeros(nf * hop)
        for h in range(NUM_HARMONICS):
            wh = weights[lo, h] + (weights[lo + 1, h] - weights[lo, h]) * fr
            harm = (h + 1) * theta
            tone_l += wh * np.sin(harm)
            tone_r += wh * np.sin(harm + w * PHASE_OFFSETS[h])

        s0 = start * hop
        s1 = stop * hop
        left = a * ((1.0 - n) * tone_l + n * noise[s0:s1, 0])
        right = a * ((1.0 - n) * tone_r + n * noise[s0:s1, 1])
        out[s0:s1, 0] = _soft_limit(left)
        out[s0:s1, 1] = _soft_limit(right)

    return out
