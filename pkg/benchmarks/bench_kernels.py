#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the pure-numpy fallback.

Times the five kernel primitives on head-sized inputs and the full decision
head forward+backward pass under each backend. The pure backend is always
importable; the compiled backend is skipped when the extension is absent.

Usage: python3 benchmarks/bench_kernels.py [--repeats 200]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from octopus.head import HeadConfig, head_backward, head_forward, init_head
from octopus.kernels import BACKEND, pure_backend

try:
    from octopus.kernels import _fast as fast_backend  # type: ignore
except ImportError:
    fast_backend = None


def bench(fn, repeats: int) -> float:
    """Best-of-5 average microseconds per call."""
    timer = timeit.Timer(fn)
    runs = timer.repeat(repeat=5, number=repeats)
    return min(runs) / repeats * 1e6


def kernel_cases(rng: np.random.Generator):
    n, d = 24, 8  # one attention head over a full-length decode snapshot
    q = rng.normal(size=(n, d))
    k = rng.normal(size=(n, d))
    v = rng.normal(size=(n, d))
    x = rng.normal(size=(n, 32))
    gain = rng.normal(size=32)
    bias = rng.normal(size=32)
    d_y = rng.normal(size=(n, 32))

    def cases(backend):
        out, attn = backend.attention_forward(q, k, v)
        y, mean, rstd = backend.layer_norm_forward(x, gain, bias)
        return {
            "softmax_rows": lambda: backend.softmax_rows(x),
            "attention_forward": lambda: backend.attention_forward(q, k, v),
            "attention_backward": lambda: backend.attention_backward(
                out, q, k, v, attn),
            "layer_norm_forward": lambda: backend.layer_norm_forward(
                x, gain, bias),
            "layer_norm_backward": lambda: backend.layer_norm_backward(
                d_y, x, gain, mean, rstd),
        }

    return cases


def head_pass():
    config = HeadConfig()
    params = init_head(config, seed=0)
    states = np.random.default_rng(1).normal(size=(24, config.d))
    cotangent = np.random.default_rng(2).normal(size=4)

    def run():
        logits, trace = head_forward(params, config, states)
        head_backward(params, config, trace, cotangent)
        return logits

    return run


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    print(f"active backend: {BACKEND}")
    backends = [("pure", pure_backend)]
    if fast_backend is not None:
        backends.append(("fast", fast_backend))
    else:
        print("compiled backend unavailable; timing the fallback only")

    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    results: dict[str, dict[str, float]] = {}
    for name, backend in backends:
        results[name] = {k: bench(fn, args.repeats)
                         for k, fn in cases(backend).items()}

    width = max(len(k) for k in results["pure"])
    header = f"{'kernel':<{width}}  " + "".join(
        f"{name + ' (us)':>12}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for kernel in results["pure"]:
        row = f"{kernel:<{width}}  "
        row += "".join(f"{results[name][kernel]:>12.2f}"
                       for name, _ in backends)
        if len(backends) == 2:
            ratio = results["pure"][kernel] / results["fast"][kernel]
            row += f"{ratio:>9.2f}x"
        print(row)

    print()
    run = head_pass()
    us = bench(run, max(args.repeats // 10, 10))
    print(f"full head forward+backward ({BACKEND} backend): {us:.1f} us")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
