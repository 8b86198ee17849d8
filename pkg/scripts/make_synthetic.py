"""Write one synthetic world as CLI-ready inputs plus a run.cfg.

    python scripts/make_synthetic.py demo/inputs --seed 1 --samples 4
    coexproc fit --config demo/inputs/run.cfg --out demo/run
"""

from __future__ import annotations

import argparse

from coexproc.synthetic import make_world, world_config, write_world


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("directory")
    ap.add_argument("--n-lat", type=int, default=10)
    ap.add_argument("--n-lon", type=int, default=20)
    ap.add_argument("--months", type=int, default=12)
    ap.add_argument("--members", type=int, default=8)
    ap.add_argument("--observations", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--samples", type=int, default=0, help="sample.count written to run.cfg")
    a = ap.parse_args(argv)
    world = make_world(a.n_lat, a.n_lon, a.months, a.members, a.observations, a.seed)
    print(write_world(world, a.directory, world_config(sample_count=a.samples)))


if __name__ == "__main__":
    main()
