#!/usr/bin/env python3
"""Compare the jitted forward kernel against the pure-numpy fallback.

The synthetic-oracle forward pass dominates experiment runtime (hundreds of
thousands of small-batch calls per run), so this is the one kernel compiled
with numba. Run with FEDBPT_NO_NUMBA=1 to confirm the package works on the
numpy path alone; this script times both paths explicitly.

Usage: python3 benchmarks/bench_kernels.py [--batch 64] [--repeats 2000]
"""

import argparse
import time

import numpy as np

from fedbpt._kernels import _forward_loops, forward_numpy

try:
    from numba import njit

    forward_jit = njit(cache=True)(_forward_loops)
except ImportError:
    forward_jit = None


def make_inputs(batch, seq_len=16, vocab=100, embed=20, hidden=32, classes=4, seed=0):
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((vocab, embed))
    w1 = rng.standard_normal((embed, hidden)) * embed**-0.25
    w2 = rng.standard_normal((hidden, classes)) * hidden**-0.25
    prompt_sum = rng.standard_normal(embed)
    flat = rng.integers(0, vocab, batch * seq_len)
    offsets = np.arange(0, (batch + 1) * seq_len, seq_len, dtype=np.int64)
    labels = rng.integers(0, classes, batch)
    return emb, w1, w2, prompt_sum, 5.0, flat, offsets, labels


def bench(fn, args, repeats):
    fn(*args)  # warm-up (and jit compile)
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()

    inputs = make_inputs(args.batch)
    rows = [("numpy", bench(forward_numpy, inputs, args.repeats))]
    if forward_jit is not None:
        rows.append(("numba", bench(forward_jit, inputs, args.repeats)))
        losses_np, preds_np = forward_numpy(*inputs)
        losses_nb, preds_nb = forward_jit(*inputs)
        agree = np.allclose(losses_np, losses_nb, atol=1e-12) and np.array_equal(
            preds_np, preds_nb
        )
        print(f"paths agree within 1e-12: {agree}")
    else:
        print("numba unavailable; timing numpy path only")

    base = rows[0][1]
    print(f"batch={args.batch} repeats={args.repeats}")
    for name, per_call in rows:
        print(f"{name:>6}: {per_call * 1e6:8.1f} us/call  ({base / per_call:4.1f}x vs numpy)")


if __name__ == "__main__":
    main()
