"""Regenerate the small end-to-end fixture under ``tests/data/fixture``.

Writes the synthetic inputs (m=3 members, n=2 months, p=16 locations) and a
golden copy of the reconstruction outputs.  Rerun only when an intended
numerical change lands, and review the diff of the golden files.

    python scripts/make_fixture.py
"""

from __future__ import annotations

import argparse
import shutil
from pathlib import Path

from coexproc.config import load_config
from coexproc.pipeline import run_reconstruction
from coexproc.synthetic import make_world, world_config, write_world

FIXTURE_WORLD = dict(n_lat=4, n_lon=4, n=2, m=3, d=6, seed=3)
FIXTURE_SAMPLES = 2
GOLDEN_PARTS = ("fields", "samples")


def build(root):
    root = Path(root)
    inputs, golden = root / "inputs", root / "golden"
    for d in (inputs, golden):
        if d.exists():
            shutil.rmtree(d)
    world = make_world(**FIXTURE_WORLD)
    cfg_path = write_world(world, inputs, world_config(sample_count=FIXTURE_SAMPLES))
    scratch = root / "_run"
    run_reconstruction(load_config(cfg_path), scratch)
    golden.mkdir(parents=True)
    for part in GOLDEN_PARTS:
        shutil.copytree(scratch / part, golden / part)
    shutil.rmtree(scratch)
    return cfg_path


def main(argv=None):
    here = Path(__file__).resolve().parent.parent
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", default=str(here / "tests" / "data" / "fixture"))
    args = ap.parse_args(argv)
    print(f"wrote {build(args.root)}")


if __name__ == "__main__":
    main()
