"""Timing comparison of the compiled and fallback im2col/col2im kernels.

Run as: python benchmarks/bench_kernels.py
Prints per-shape timings for both backends plus an agreement check, since the
fallback is the reference for the compiled core.
"""

import importlib
import os
import sys
import time

import numpy as np


def _load_backends():
    os.environ["STPL_KERNEL_BACKEND"] = "fallback"
    import stpl._kernels as pkg

    importlib.reload(pkg)
    fallback = {"im2col": pkg.im2col, "col2im": pkg.col2im, "name": pkg.BACKEND}
    os.environ["STPL_KERNEL_BACKEND"] = "auto"
    importlib.reload(pkg)
    primary = {"im2col": pkg.im2col, "col2im": pkg.col2im, "name": pkg.BACKEND}
    return fallback, primary


CASES = [
    # (label, B, C, H, W, kh, kw, stride, padding, dilation)
    ("entry 1x1 64ch 16px", 8, 64, 16, 16, 1, 1, 1, 0, 1),
    ("3x3 s1 32ch 32px", 8, 32, 32, 32, 3, 3, 1, 1, 1),
    ("4x4 s2 32ch 64px", 8, 32, 64, 64, 4, 4, 2, 1, 1),
    ("depthwise-ish 5x5 64ch", 8, 64, 16, 16, 5, 5, 1, 2, 1),
    ("dilated 7x7 d3 64ch", 8, 64, 16, 16, 7, 7, 1, 9, 3),
]


def _time(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main() -> int:
    fallback, primary = _load_backends()
    if primary["name"] == fallback["name"]:
        print("compiled backend unavailable; timing fallback against itself")
    rng = np.random.default_rng(7)
    print(f"primary backend: {primary['name']}")
    header = f"{'case':28s} {'dir':8s} {'fallback':>12s} {primary['name']:>12s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for label, b, c, h, w, kh, kw, stride, pad, dil in CASES:
        x = rng.standard_normal((b, c, h, w), dtype=np.float32)
        ho = (h + 2 * pad - dil * (kh - 1) - 1) // stride + 1
        wo = (w + 2 * pad - dil * (kw - 1) - 1) // stride + 1

        t_fb, col_fb = _time(fallback["im2col"], x, kh, kw, stride, pad, dil)
        t_pr, col_pr = _time(primary["im2col"], x, kh, kw, stride, pad, dil)
        if not np.array_equal(col_fb, col_pr):
            print(f"MISMATCH in im2col for {label}", file=sys.stderr)
            return 1
        print(f"{label:28s} {'im2col':8s} {t_fb * 1e3:10.3f}ms {t_pr * 1e3:10.3f}ms "
              f"{t_fb / t_pr:7.2f}x")

        col = np.ascontiguousarray(col_fb)
        t_fb, out_fb = _time(fallback["col2im"], col, h, w, kh, kw, stride, pad, dil)
        t_pr, out_pr = _time(primary["col2im"], col, h, w, kh, kw, stride, pad, dil)
        if not np.array_equal(out_fb, out_pr):
            print(f"MISMATCH in col2im for {label}", file=sys.stderr)
            return 1
        print(f"{'':28s} {'col2im':8s} {t_fb * 1e3:10.3f}ms {t_pr * 1e3:10.3f}ms "
              f"{t_fb / t_pr:7.2f}x")
        del ho, wo
    return 0


if __name__ == "__main__":
    sys.exit(main())
