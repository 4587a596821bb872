#!/usr/bin/env python3
"""Compare the compiled attention kernel against the numpy fallback.

Usage: python3 benchmarks/bench_attention.py [--repeats 50]

Shapes cover the streaming settings (24/24, 48/48 tokens) and the
full-context 256-token forward for each model size.
"""

import argparse
import time

import numpy as np

from streamtag import kernels
from streamtag.kernels import _numpy_backend

CASES = [
    # (label, heads, n_query, n_context, head_dim)
    ("tiny  1s stream", 3, 24, 48, 64),
    ("tiny  2s stream", 3, 48, 96, 64),
    ("tiny  full ctx ", 3, 256, 256, 64),
    ("small 2s stream", 6, 48, 96, 64),
    ("small full ctx ", 6, 256, 256, 64),
    ("base  2s stream", 12, 48, 96, 64),
    ("base  full ctx ", 12, 256, 256, 64),
]


def bench(fn, q, k, v, scale, repeats):
    fn(q, k, v, scale)  # warm-up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(q, k, v, scale)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"available backends: {backends}")
    if "c" not in backends:
        print("compiled backend not built; only timing numpy")
    print(f"{'case':<16} {'numpy (us)':>12} {'c (us)':>12} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for label, h, n, m, hd in CASES:
        q = rng.normal(size=(h, n, hd))
        k = rng.normal(size=(h, m, hd))
        v = rng.normal(size=(h, m, hd))
        scale = 1.0 / np.sqrt(hd)
        t_np = bench(_numpy_backend.attention_heads, q, k, v, scale, args.repeats)
        if "c" in backends:
            cb = kernels.get_backend("c")
            t_c = bench(cb.attention_heads, q, k, v, scale, args.repeats)
            out_np = _numpy_backend.attention_heads(q, k, v, scale)
            out_c = cb.attention_heads(q, k, v, scale)
            assert np.max(np.abs(out_np - out_c)) <= 1e-12
            print(f"{label:<16} {t_np * 1e6:>12.1f} {t_c * 1e6:>12.1f} "
                  f"{t_np / t_c:>7.2f}x")
        else:
            print(f"{label:<16} {t_np * 1e6:>12.1f} {'-':>12} {'-':>8}")


if __name__ == "__main__":
    main()
