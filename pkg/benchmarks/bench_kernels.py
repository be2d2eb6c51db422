"""Time the numba-jitted kernels against the pure-numpy fallback.

Usage:
    python benchmarks/bench_kernels.py

Shapes mirror the desk-scale training workload (32x32x16 input, 4 base
filters): the level-0 decoder convolution dominates a training step. Run with
BATSEG_NO_NUMBA=1 to confirm the fallback path is the one being exercised by
the package elsewhere; this script always times both paths explicitly.
"""

import time

import numpy as np

from batseg import kernels

CASES = [
    # (label, cin, cout, spatial)
    ("encoder L0 conv", 4, 4, (32, 32, 16)),
    ("decoder L0 conv", 12, 4, (32, 32, 16)),
    ("bottleneck conv", 32, 32, (4, 4, 2)),
]
REPEATS = 5


def time_fn(fn, *args, **kwargs):
    fn(*args, **kwargs)  # warm-up (and jit compile)
    best = float("inf")
    for _ in range(REPEATS):
        t0 = time.perf_counter()
        fn(*args, **kwargs)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    print(f"numba available and enabled: {kernels.USING_NUMBA}")
    rng = np.random.default_rng(0)
    for label, cin, cout, spatial in CASES:
        x = rng.standard_normal((cin, *spatial))
        w = rng.standard_normal((cout, cin, 3, 3, 3))
        b = rng.standard_normal(cout)
        gout = rng.standard_normal((cout, *spatial))

        t_np = time_fn(kernels.conv3d_forward, x, w, b, force_numpy=True)
        t_np_bwd = time_fn(kernels.conv3d_backward, x, w, gout, force_numpy=True)
        line = f"{label:18s} fwd numpy {t_np * 1e3:8.2f} ms"
        if kernels.USING_NUMBA:
            t_jit = time_fn(kernels.conv3d_forward, x, w, b)
            t_jit_bwd = time_fn(kernels.conv3d_backward, x, w, gout, force_scalar=True)
            line += f" | numba {t_jit * 1e3:8.2f} ms | speedup {t_np / t_jit:5.2f}x"
            line += f" || bwd numpy {t_np_bwd * 1e3:8.2f} ms | numba {t_jit_bwd * 1e3:8.2f} ms"
            line += f" | speedup {t_np_bwd / t_jit_bwd:5.2f}x"
        else:
            line += f" || bwd numpy {t_np_bwd * 1e3:8.2f} ms"
        print(line)

    x = rng.standard_normal((4, 32, 32, 16))
    t_np = time_fn(kernels.maxpool3d_forward, x, force_numpy=True)
    line = f"{'maxpool 2x2x2':18s} fwd numpy {t_np * 1e3:8.2f} ms"
    if kernels.USING_NUMBA:
        t_jit = time_fn(kernels.maxpool3d_forward, x)
        line += f" | numba {t_jit * 1e3:8.2f} ms | speedup {t_np / t_jit:5.2f}x"
    print(line)


if __name__ == "__main__":
    main()
