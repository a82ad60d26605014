# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled additive-synthesis core; hot inner loop of the renderer.

Mirrors ``_synth_np.synth_core`` sample for sample: per-sample parameter
interpolation, phase-continuous 8-harmonic oscillator, width-controlled
right-channel phase spread, noise mix, soft limiter transparent below
0.95.

The per-harmonic offsets are GOLDEN * (h + 1) * width, so the right
channel is the same harmonic stack evaluated at phase + GOLDEN * width;
both channels then need only one sin/cos pair each per sample, with the
higher harmonics produced by angle-addition recurrences.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sin, cos, tanh, fabs

cnp.import_array()

cdef double LIMIT_KNEE = 0.95
cdef double TWO_PI = 6.283185307179586
cdef double GOLDEN = 2.399963229728653


cdef inline double _soft_limit(double x) nogil:
    cdef double mag = fabs(x)
    cdef double span = 1.0 - LIMIT_KNEE
    cdef double lim
    if mag <= LIMIT_KNEE:
        return x
    lim = LIMIT_KNEE + span * tanh((mag - LIMIT_KNEE) / span)
    return lim if x >= 0.0 else -lim


cdef inline double _harmonic_sum(double phase, double* wh) nogil:
    cdef double s1 = sin(phase)
    cdef double c1 = cos(phase)
    cdef double s = s1, c = c1, total = wh[0] * s1
    cdef double s_next
    cdef Py_ssize_t h
    for h in range(1, 8):
        s_next = s * c1 + c * s1
        c = c * c1 - s * s1
        s = s_next
        total += wh[h] * s
    return total


def synth_core(double[::1] freq, double[:, ::1] weights, double[::1] amp,
               double[::1] width, double[::1] nmix, double[:, ::1] noise,
               int hop, double sample_rate):
    """Render (num_frames * hop, 2) float32 samples; see _synth_np.synth_core."""
    cdef Py_ssize_t num_frames = freq.shape[0] - 1
    cdef Py_ssize_t total = num_frames * hop
    out_arr = np.empty((total, 2), dtype=np.float32)
    cdef float[:, ::1] out = out_arr

    cdef Py_ssize_t n, i, h, idx
    cdef double frac, inv_hop = 1.0 / hop
    cdef double f, a, w, nz, theta = 0.0
    cdef double tone_l, tone_r, left, right
    cdef double[8] wh

    with nogil:
        idx = 0
        for n in range(num_frames):
            for i in range(hop):
                frac = i * inv_hop
                f = freq[n] + (freq[n + 1] - freq[n]) * frac
                a = amp[n] + (amp[n + 1] - amp[n]) * frac
                w = width[n] + (width[n + 1] - width[n]) * frac
                nz = nmix[n] + (nmix[n + 1] - nmix[n]) * frac
                for h in range(8):
                    wh[h] = weights[n, h] + (weights[n + 1, h] - weights[n, h]) * frac

                tone_l = _harmonic_sum(theta, wh)
                tone_r = _harmonic_sum(theta + GOLDEN * w, wh)

                left = a * ((1.0 - nz) * tone_l + nz * noise[idx, 0])
                right = a * ((1.0 - nz) * tone_r + nz * noise[idx, 1])
                out[idx, 0] = <float>_soft_limit(left)
                out[idx, 1] = <float>_soft_limit(right)

                theta += TWO_PI * f / sample_rate
                idx += 1

    return out_arr
