"""Compiled vs numpy exhaustive grid search (the grid oracle's inner loop).

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from mixalloc import kernels
from mixalloc import _kernels_py as fallback


def _grid_case(rng, sizes):
    width = max(sizes)
    acc = np.full((len(sizes), width), -np.inf)
    lat = np.full((len(sizes), width), np.inf)
    for i, k in enumerate(sizes):
        acc[i, :k] = rng.uniform(50, 95, k)
        lat[i, :k] = np.sort(rng.uniform(5, 300, k))
    budget = 0.6 * float(sum(lat[i, :k].max() for i, k in enumerate(sizes)))
    return acc, lat, np.asarray(sizes, dtype=np.int_), budget


def _time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if kernels.compiled is None:
        print("compiled extension not built; only the numpy kernel is available")
    rng = np.random.default_rng(args.seed)
    impls = [("numpy", fallback)] + ([("cython", kernels.compiled)] if kernels.compiled else [])

    print(f"{'case':<26}" + "".join(f"{name:>12}" for name, _ in impls) + f"{'speedup':>10}")
    for sizes in ([1000, 1000], [200, 200, 200], [60, 60, 60, 60], [400, 400, 60]):
        case = _grid_case(rng, sizes)
        times, results = [], []
        for _, mod in impls:
            t, r = _time(lambda: mod.grid_best(*case), args.repeat)
            times.append(t)
            results.append(r)
        assert all(r == results[0] for r in results), "kernels disagree"
        label = "grid " + "x".join(map(str, sizes))
        speed = f"{times[0] / times[-1]:>9.1f}x" if len(times) > 1 else ""
        print(f"{label:<26}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times) + speed)


if __name__ == "__main__":
    main()
