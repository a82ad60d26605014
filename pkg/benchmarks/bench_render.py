"""Compare the compiled synth kernel against the numpy fallback.

Usage: python benchmarks/bench_render.py [--frames 512] [--repeats 3]
"""

import argparse
import time

import numpy as np

from mindcube import sonify
from mindcube import _synth_np

try:
    from mindcube import _synth
except ImportError:
    _synth = None


def bench(backend, latents, hop, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        audio = sonify.render_latents(latents, hop=hop, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, audio


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--frames", type=int, default=512)
    parser.add_argument("--hop", type=int, default=2048)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    rng = np.random.default_rng(7)
    latents = rng.normal(0, 1, (args.frames, 4))
    samples = args.frames * args.hop

    t_np, audio_np = bench(_synth_np, latents, args.hop, args.repeats)
    print(f"numpy fallback : {t_np * 1e3:8.1f} ms  "
          f"({samples / t_np / 1e6:6.1f} Msamples/s)")

    if _synth is None:
        print("compiled kernel: not built (pip install -e . --no-build-isolation)")
        return

    t_c, audio_c = bench(_synth, latents, args.hop, args.repeats)
    print(f"compiled kernel: {t_c * 1e3:8.1f} ms  "
          f"({samples / t_c / 1e6:6.1f} Msamples/s)")
    print(f"speedup        : {t_np / t_c:8.2f}x")

    diff = np.max(np.abs(audio_np.samples - audio_c.samples))
    print(f"max |diff|     : {diff:.2e}")


if __name__ == "__main__":
    main()
