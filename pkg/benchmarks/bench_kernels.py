#!/usr/bin/env python3
"""Benchmark the numba and numpy kernel backends against each other.

Runs the motion-counting and cluster-aggregation kernels on sized inputs
and prints a timing table. The numba backend is what CAMNET_NUMBA=1
(default) selects at import time; CAMNET_NUMBA=0 falls back to the numpy
implementations measured here.

    python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from camnet.kernels import numpy_impl
from camnet.scenes import MovingBlobScene, SceneSpec

try:
    from camnet.kernels import numba_impl
except ImportError:
    numba_impl = None


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_motion(impl, frames, repeats):
    def run():
        for prev, curr in zip(frames[:-1], frames[1:]):
            impl.motion_feature_count(prev, curr, 25, 16)

    return time_call(run, repeats)


def bench_change(impl, frames, repeats):
    def run():
        for prev, curr in zip(frames[:-1], frames[1:]):
            impl.change_fraction(prev, curr, 25)

    return time_call(run, repeats)


def bench_cluster(impl, lat, lon, zoom, repeats):
    def run():
        cells = impl.mercator_cells(lat, lon, zoom)
        impl.aggregate_cells(cells, lat, lon)

    return time_call(run, repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--frames", type=int, default=50)
    parser.add_argument("--points", type=int, default=1_000_000)
    args = parser.parse_args()

    scene = MovingBlobScene(SceneSpec(kind="moving_blobs", width=640, height=480, count=8, size_px=12, seed=1))
    frames = [scene.render(i)[0] for i in range(args.frames)]
    rng = np.random.default_rng(7)
    lat = rng.uniform(-90, 90, args.points)
    lon = rng.uniform(-180, 180, args.points)

    backends = [("numpy", numpy_impl)]
    if numba_impl is not None:
        numba_impl.warmup()  # compile outside the timed region
        backends.append(("numba", numba_impl))
    else:
        print("numba unavailable; benchmarking the numpy fallback only")

    rows = []
    for label, size, fn in (
        (f"motion_feature_count {args.frames - 1}x640x480", None, bench_motion),
        (f"change_fraction      {args.frames - 1}x640x480", None, bench_change),
        (f"cluster kernels      {args.points} pts zoom 6", None, bench_cluster),
    ):
        timings = {}
        for name, impl in backends:
            if fn is bench_cluster:
                timings[name] = fn(impl, lat, lon, 6, args.repeats)
            else:
                timings[name] = fn(impl, frames, args.repeats)
        rows.append((label, timings))

    width = max(len(r[0]) for r in rows)
    header = f"{'kernel':<{width}}  " + "".join(f"{name:>12}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, timings in rows:
        line = f"{label:<{width}}  " + "".join(f"{timings[name] * 1000:>10.1f}ms" for name, _ in backends)
        if len(backends) == 2:
            line += f"{timings['numpy'] / timings['numba']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
