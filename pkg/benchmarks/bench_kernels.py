"""Benchmark the two kernel backends against each other.

Times the KDE rasterisation and the batch point-in-polygon test on a
synthetic city-scale workload, once per backend, and reports the speedup.
The first numba call is excluded (compilation); every timed configuration
also checks that the two backends produce bit-identical arrays.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --points 20000 --cells 600 --repeat 5
"""
from __future__ import annotations

import argparse
import math
import sys
import time

import numpy as np

from microequity import kernels


def bench_kde(n_points: int, n_cells: int, repeat: int, rng: np.random.Generator):
    side = 10_000.0
    radius = 201.168
    cell = side / n_cells
    pxs = rng.uniform(0.0, side, n_points)
    pys = rng.uniform(0.0, side, n_points)
    ws = np.ones(n_points)
    scale = 1e6 * 3.0 / (math.pi * radius * radius)

    results = {}
    timings = {}
    for backend in kernels.available_backends():
        kernels.use_backend(backend)
        values = np.zeros((n_cells, n_cells))
        kernels.kde_accumulate(values, 0.0, 0.0, cell, pxs, pys, ws, radius, scale)  # warmup
        best = math.inf
        for _ in range(repeat):
            values = np.zeros((n_cells, n_cells))
            t0 = time.perf_counter()
            kernels.kde_accumulate(values, 0.0, 0.0, cell, pxs, pys, ws, radius, scale)
            best = min(best, time.perf_counter() - t0)
        results[backend] = values
        timings[backend] = best
    kernels.use_backend(None)
    if len(results) == 2:
        assert np.array_equal(results["numpy"], results["numba"]), "backends disagree"
    return timings


def bench_pip(n_points: int, n_vertices: int, repeat: int, rng: np.random.Generator):
    angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, n_vertices))
    radii = rng.uniform(2_000.0, 5_000.0, n_vertices)
    vx = 5_000.0 + radii * np.cos(angles)
    vy = 5_000.0 + radii * np.sin(angles)
    ring_x = np.concatenate([vx, vx[:1]])
    ring_y = np.concatenate([vy, vy[:1]])
    starts = np.array([0, len(ring_x)], dtype=np.int64)
    xs = rng.uniform(0.0, 10_000.0, n_points)
    ys = rng.uniform(0.0, 10_000.0, n_points)

    results = {}
    timings = {}
    for backend in kernels.available_backends():
        kernels.use_backend(backend)
        kernels.points_in_rings(xs, ys, ring_x, ring_y, starts)  # warmup
        best = math.inf
        for _ in range(repeat):
            t0 = time.perf_counter()
            out = kernels.points_in_rings(xs, ys, ring_x, ring_y, starts)
            best = min(best, time.perf_counter() - t0)
        results[backend] = out
        timings[backend] = best
    kernels.use_backend(None)
    if len(results) == 2:
        assert np.array_equal(results["numpy"], results["numba"]), "backends disagree"
    return timings


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=10_000, help="points per workload")
    parser.add_argument("--cells", type=int, default=400, help="raster edge in cells")
    parser.add_argument("--vertices", type=int, default=400, help="polygon vertex count")
    parser.add_argument("--repeat", type=int, default=3, help="timed repetitions (min wins)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    backends = kernels.available_backends()
    print(f"backends available: {', '.join(backends)}")
    if "numba" not in backends:
        print("numba not importable; benchmarking the numpy backend only")

    rows = [
        ("kde_accumulate", bench_kde(args.points, args.cells, args.repeat, rng)),
        ("points_in_rings", bench_pip(args.points, args.vertices, args.repeat, rng)),
    ]
    width = max(len(name) for name, _ in rows)
    print(f"{'kernel'.ljust(width)}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, timing in rows:
        np_t = timing.get("numpy", math.nan)
        nb_t = timing.get("numba", math.nan)
        speedup = f"{np_t / nb_t:7.1f}x" if "numba" in timing else "     n/a"
        print(f"{name.ljust(width)}  {np_t * 1e3:9.2f}ms  "
              f"{(nb_t * 1e3 if 'numba' in timing else math.nan):9.2f}ms  {speedup}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
