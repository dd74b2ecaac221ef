#!/usr/bin/env python3
"""Time the hot kernels on both backends (compiled vs numpy fallback).

Usage:  python benchmarks/bench_kernels.py [--repeats 5]

Covers the three loops that dominate simulator runtime: a single batch
loss+gradient, a tau-step local-update chain, and a reservoir pass over a
long arrival stream.  Results also cross-check that both backends agree
to floating-point noise.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fedco import _kernels_py

try:
    from fedco import _fastcore
except ImportError:
    _fastcore = None


def timeit(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_backend(mod, repeats: int) -> dict[str, float]:
    rng = np.random.default_rng(0)
    d, s, tau, n_buf = 21, 32, 8, 2000
    W = np.ascontiguousarray(rng.normal(size=(4, d)))
    X = np.ascontiguousarray(rng.normal(size=(s, d)))
    y = rng.integers(0, 4, s).astype(np.int64)
    G = np.empty_like(W)

    BX = np.ascontiguousarray(rng.normal(size=(n_buf, d)))
    by = rng.integers(0, 4, n_buf).astype(np.int64)
    idx = rng.integers(0, n_buf, size=(tau, s)).astype(np.int64)
    W0 = W.copy()

    arrivals = np.ascontiguousarray(rng.normal(size=(20_000, 4)))
    ay = rng.integers(0, 4, 20_000).astype(np.int64)
    cap = 500
    js = rng.integers(1, np.arange(cap + 1, cap + 1 + (20_000 - cap)), endpoint=True).astype(np.int64)

    out = {}
    out["svm_batch (32x21, 4 classes)"] = timeit(
        lambda: [mod.svm_batch(W, X, y, 0.1, grad_out=G) for _ in range(200)], repeats
    )
    out["chain_steps (tau=8, s=32)"] = timeit(
        lambda: [mod.chain_steps(0, W0.copy(), BX, by, idx, 0.005, 0.1) for _ in range(100)],
        repeats,
    )

    def reservoir():
        bufX = np.zeros((cap, 4))
        bufy = np.zeros(cap, dtype=np.int64)
        mod.reservoir_apply(bufX, bufy, arrivals, ay, 0, 0, js)

    out["reservoir (20k arrivals, cap 500)"] = timeit(reservoir, repeats)
    return out


def check_parity() -> float:
    if _fastcore is None:
        return float("nan")
    rng = np.random.default_rng(1)
    W = np.ascontiguousarray(rng.normal(size=(3, 9)))
    X = np.ascontiguousarray(rng.normal(size=(40, 9)))
    y = rng.integers(0, 3, 40).astype(np.int64)
    worst = 0.0
    for mod_fn_a, mod_fn_b in (
        (_kernels_py.svm_batch, _fastcore.svm_batch),
        (_kernels_py.logistic_batch, _fastcore.logistic_batch),
    ):
        Ga, Gb = np.empty_like(W), np.empty_like(W)
        la = mod_fn_a(W, X, y, 0.05, grad_out=Ga)
        lb = mod_fn_b(W, X, y, 0.05, grad_out=Gb)
        worst = max(worst, abs(la - lb), float(np.abs(Ga - Gb).max()))
    return worst


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = [("numpy", _kernels_py)]
    if _fastcore is not None:
        backends.append(("cython", _fastcore))
    else:
        print("compiled extension not built; showing numpy fallback only")

    results = {name: bench_backend(mod, args.repeats) for name, mod in backends}
    kernels = list(next(iter(results.values())))
    width = max(len(k) for k in kernels)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{n:>10}" for n in results)
    if len(results) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    for k in kernels:
        row = f"{k:<{width}}  " + "  ".join(f"{results[n][k]*1e3:>8.2f}ms" for n in results)
        if len(results) == 2:
            row += f"  {results['numpy'][k] / results['cython'][k]:>7.1f}x"
        print(row)
    if _fastcore is not None:
        print(f"\nbackend agreement (max abs diff): {check_parity():.3e}")


if __name__ == "__main__":
    main()
