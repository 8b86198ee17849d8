"""Coverage and data-gain experiment on synthetic worlds with known truth.

For each world: run the in-memory pipeline, then record the fraction of
grid values within ``bound`` adjusted sds of the truth (SST after the data
update, SIC at the true SST) and the RMSE of both SST stages near the
observations.

    python scripts/coverage_experiment.py --worlds 50 --out coverage.csv
"""

from __future__ import annotations

import argparse
import csv
import time
from dataclasses import asdict, dataclass

import numpy as np

from coexproc.pipeline import reconstruct
from coexproc.synthetic import make_world, world_config


@dataclass
class WorldScore:
    seed: int
    sst_coverage: float
    sic_coverage: float
    rmse_ensemble: float
    rmse_data: float
    near_count: int
    seconds: float


def score_world(seed, n_lat=10, n_lon=20, n=12, m=8, d=30, bound=3.0):
    start = time.perf_counter()
    world = make_world(n_lat=n_lat, n_lon=n_lon, n=n, m=m, d=d, seed=seed)
    cfg = world_config()
    sst, sic = world.ensembles()
    res = reconstruct(sst, sic, world.observations, world.extent, cfg)

    x_sd = np.sqrt(res.sst_second.marginal_var())
    sst_cov = float(np.mean(np.abs(res.sst_second.mean - world.x_true) <= bound * x_sd))

    sic_rec = res.sic_pipeline(world.x_true)
    y_sd = np.sqrt(sic_rec.marginal_var())
    sic_cov = float(np.mean(np.abs(sic_rec.mean - world.y_true) <= bound * y_sd))

    # locations within one discrepancy range of an observation
    c = cfg.field.wendland.c
    near = world.grid.distances_to(world.observations.lats, world.observations.lons).min(axis=0) \
        * cfg.field.dist_scale <= c
    mask = np.tile(near, world.n)
    rmse = [float(np.sqrt(np.mean((r.mean[mask] - world.x_true[mask]) ** 2)))
            for r in (res.sst_first, res.sst_second)]
    return WorldScore(seed, sst_cov, sic_cov, rmse[0], rmse[1], int(near.sum()), time.perf_counter() - start)


def run(worlds=50, first_seed=0, **kw):
    return [score_world(first_seed + i, **kw) for i in range(worlds)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--worlds", type=int, default=50)
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)
    start = time.perf_counter()
    scores = run(args.worlds, args.first_seed)
    total = time.perf_counter() - start
    sst = np.array([s.sst_coverage for s in scores])
    sic = np.array([s.sic_coverage for s in scores])
    wins = sum(s.rmse_data < s.rmse_ensemble for s in scores)
    print(f"worlds {len(scores)}  time {total:.1f}s")
    print(f"SST coverage mean {sst.mean():.4f} min {sst.min():.4f}")
    print(f"SIC coverage mean {sic.mean():.4f} min {sic.min():.4f}")
    print(f"data update lowers RMSE in {wins}/{len(scores)} worlds")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(asdict(scores[0])))
            w.writeheader()
            w.writerows(asdict(s) for s in scores)


if __name__ == "__main__":
    main()
