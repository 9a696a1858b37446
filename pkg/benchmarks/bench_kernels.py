#!/usr/bin/env python3
"""Benchmark the JIT kernels against their pure-NumPy/Python fallbacks.

Runs both implementations in one process (requires numba importable; with
``REFTA_NO_NUMBA=1`` only the fallback exists and this script reports that).

    python3 benchmarks/bench_kernels.py
"""

from __future__ import annotations

import time

import numpy as np

from refta import kernels


def timeit(fn, *args, repeat: int = 5) -> float:
    fn(*args)  # warm-up (triggers JIT compilation on the numba path)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def random_graph(n: int, dim: int, degree: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((n, dim)).astype(np.float32)
    vectors /= np.linalg.norm(vectors.astype(np.float64), axis=1, keepdims=True).astype(
        np.float32
    )
    neigh = rng.integers(0, n, size=(n, degree)).astype(np.int32)
    counts = np.full(n, degree, dtype=np.int32)
    return np.ascontiguousarray(vectors), neigh, counts


def bench_search_layer(rows: list[tuple[str, float, float]]) -> None:
    n, dim, degree, ef, queries = 20_000, 64, 32, 128, 50
    vectors, neigh, counts = random_graph(n, dim, degree)
    rng = np.random.default_rng(1)
    qs = rng.standard_normal((queries, dim)).astype(np.float32)
    entries = np.array([0], dtype=np.int64)

    def run(fn):
        for q in qs:
            fn(vectors, neigh, counts, entries, q, ef)

    t_py = timeit(run, kernels._search_layer_py, repeat=3)
    t_nb = timeit(run, kernels._search_layer_nb, repeat=3) if kernels.HAS_NUMBA else None
    rows.append((f"search_layer (n={n}, ef={ef}, {queries} queries)", t_py, t_nb))


def bench_dot_scores(rows: list[tuple[str, float, float]]) -> None:
    # two regimes: small gathers as in graph traversal, and bulk rescoring
    n, dim = 100_000, 64
    rng = np.random.default_rng(2)
    vectors = rng.standard_normal((n, dim)).astype(np.float32)
    q = rng.standard_normal(dim).astype(np.float32)
    for gathered, reps in ((32, 10_000), (2_000, 200)):
        ids = rng.integers(0, n, size=gathered).astype(np.int64)

        def run(fn):
            for _ in range(reps):
                fn(vectors, ids, q)

        t_np = timeit(run, kernels._dot_scores_np)
        t_nb = timeit(run, kernels._dot_scores_nb) if kernels.HAS_NUMBA else None
        rows.append((f"dot_scores ({gathered} rows x {reps} reps)", t_np, t_nb))


def bench_resample_sums(rows: list[tuple[str, float, float]]) -> None:
    n_seg, dim, n_resamples, reps = 110, 24, 1_000, 20
    rng = np.random.default_rng(3)
    stats = rng.integers(0, 60, size=(n_seg, dim)).astype(np.int64)
    idx = rng.integers(0, n_seg, size=(n_resamples, n_seg)).astype(np.int64)

    def run(fn):
        for _ in range(reps):
            fn(stats, idx)

    t_np = timeit(run, kernels._resample_sums_np)
    t_nb = timeit(run, kernels._resample_sums_nb) if kernels.HAS_NUMBA else None
    rows.append((f"resample_sums ({n_resamples}x{n_seg} x {reps} reps)", t_np, t_nb))


def main() -> None:
    print(f"active backend: {kernels.BACKEND}")
    if not kernels.HAS_NUMBA:
        print("numba unavailable or disabled; timing the fallback path only\n")
    rows: list[tuple[str, float, float]] = []
    bench_dot_scores(rows)
    bench_resample_sums(rows)
    bench_search_layer(rows)

    width = max(len(r[0]) for r in rows)
    print(f"\n{'kernel'.ljust(width)}  {'fallback':>10}  {'numba':>10}  {'speedup':>8}")
    for name, t_base, t_nb in rows:
        if t_nb is None:
            print(f"{name.ljust(width)}  {t_base * 1e3:>8.1f}ms  {'-':>10}  {'-':>8}")
        else:
            print(
                f"{name.ljust(width)}  {t_base * 1e3:>8.1f}ms  {t_nb * 1e3:>8.1f}ms"
                f"  {t_base / t_nb:>7.1f}x"
            )


if __name__ == "__main__":
    main()
