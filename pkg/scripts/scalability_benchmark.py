"""Time and trace memory of the data update on a large grid.

Builds an ensemble-adjusted SST belief on ``p`` quasi-uniform points with
``n`` months and adjusts it by ``d`` random point observations.  Peak
Python-heap allocation is measured with ``tracemalloc`` (numpy buffers are
traced).

    python scripts/scalability_benchmark.py --p 4145 --n 12 --d 500
"""

from __future__ import annotations

import argparse
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from coexproc.basis import WendlandParams, wendland_gram
from coexproc.coex_field import ENSEMBLE_ADJUSTED, FieldReconstruction, make_observations, second_update_field
from coexproc.grid import Grid, default_month_labels


@dataclass
class BenchResult:
    p: int
    n: int
    d: int
    seconds: float
    peak_bytes: int
    dense_bytes: int


def fibonacci_grid(p):
    """``p`` nearly uniform points on the sphere (degrees)."""
    i = np.arange(p) + 0.5
    lat = np.degrees(np.arcsin(1.0 - 2.0 * i / p))
    lon = (np.degrees(np.pi * (1.0 + 5.0**0.5) * i) + 180.0) % 360.0 - 180.0
    return Grid(lat, lon)


def build_problem(p=4145, n=12, d=500, seed=0):
    rng = np.random.default_rng(seed)
    grid = fibonacci_grid(p)
    VS = wendland_gram(grid.lats, grid.lons, WendlandParams(1.61, 0.92, 6.0)) \
        + 0.5 * wendland_gram(grid.lats, grid.lons, WendlandParams(1.0, 1.2, 6.0))
    mean = rng.normal(10.0, 5.0, n * p)
    rec = FieldReconstruction(mean, np.ones((n, n)), VS, ENSEMBLE_ADJUSTED)
    lats = rng.uniform(-80, 80, d)
    lons = rng.uniform(-180, 180, d)
    seasons = np.where(rng.uniform(size=d) < 0.3, "summer", "annual")
    obs = make_observations(lats, lons, rng.normal(10.0, 5.0, d), np.full(d, 0.5), grid,
                            default_month_labels(n), list(seasons))
    return rec, obs


def benchmark(p=4145, n=12, d=500, seed=0):
    rec, obs = build_problem(p, n, d, seed)
    tracemalloc.start()
    tracemalloc.reset_peak()
    start = time.perf_counter()
    out = second_update_field(rec, obs)
    seconds = time.perf_counter() - start
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert out.mean.shape == (n * p,)
    return BenchResult(p, n, d, seconds, peak, (n * p) ** 2 * 8)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=int, default=4145)
    ap.add_argument("--n", type=int, default=12)
    ap.add_argument("--d", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)
    r = benchmark(a.p, a.n, a.d, a.seed)
    print(f"p={r.p} n={r.n} d={r.d}: {r.seconds:.1f}s, peak traced {r.peak_bytes / 2**30:.3f} GiB "
          f"(a dense (np)^2 matrix would need {r.dense_bytes / 2**30:.1f} GiB)")


if __name__ == "__main__":
    main()
