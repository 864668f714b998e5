"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel runs once untimed (numba compiles on first call) and is then
timed as the best of ``--repeat`` runs.  Outputs of the two backends are
compared before timing.
"""

import argparse
import time

import numpy as np

from dstts import _kernels

rng = np.random.default_rng(0)
_frames = rng.standard_normal((200, 1024))
_cols = rng.standard_normal((300, 9 * 64))

CASES = {
    "sinc_resample 48k->16k (1 s)": ("sinc_resample", (rng.standard_normal(48000), 1 / 3, 16000, 32, 1 / 3)),
    "autocorr_frames 200x1024": ("autocorr_frames", (_frames, 26, 320)),
    "overlap_add 200 frames": ("overlap_add", (_frames, np.hanning(1024), 256, 199 * 256 + 1024)),
    "scatter_add_rows 5000->40": ("scatter_add_rows", (rng.standard_normal((5000, 64)), rng.integers(0, 40, 5000), 40)),
    "col2im L=300 k=9 c=64": ("col2im", (_cols, 300, 9, 64)),
}


def best_of(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels.numba_impl is None:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, (name, kargs) in CASES.items():
        np_fn = getattr(_kernels.numpy_impl, name)
        nb_fn = getattr(_kernels.numba_impl, name)
        a, b = np_fn(*kargs), nb_fn(*kargs)
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-9)
        t_np = best_of(np_fn, kargs, args.repeat)
        t_nb = best_of(nb_fn, kargs, args.repeat)
        print(f"{label:32s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
