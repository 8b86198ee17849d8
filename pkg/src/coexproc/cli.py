"""Command-line entry point: ``coexproc {fit,sample,diagnose,validate}``.

Exit codes: 0 success, 2 schema/input error, 3 numerical failure, 4 I/O error.
The default BLAS thread count comes from ``COEXPROC_THREADS`` when
``--threads`` is not given.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import (DegenerateEnsembleError, InvalidBeliefsError, InvalidInputError, NotPSDError,
                     SchemaError, StageError)
from .io import load_extent_table, load_field_bundle, load_observation_table
from .pipeline import check_matching, diagnose, run_reconstruction, sample_command

EXIT_OK, EXIT_SCHEMA, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
THREADS_ENV = "COEXPROC_THREADS"

log = logging.getLogger("coexproc")


def exit_code(exc):
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (NotPSDError, InvalidBeliefsError, DegenerateEnsembleError, np.linalg.LinAlgError,
                        FloatingPointError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (SchemaError, InvalidInputError)):
        return EXIT_SCHEMA
    if isinstance(exc, OSError):
        return EXIT_IO
    return None


def thread_limit(threads):
    """Context limiting BLAS threads (needs ``threadpoolctl``; no-op otherwise)."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else None
    if threads is None:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("threadpoolctl not installed; --threads ignored")
        return nullcontext()
    return threadpool_limits(limits=int(threads))


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.sample.seed = args.seed
    return cfg


def cmd_fit(args):
    cfg = _config(args)
    out = Path(args.out or cfg.output.dir)
    result = run_reconstruction(cfg, out)
    log.info("wrote reconstruction to %s (%d observations, sst cond %.3e)", out, result.observations.d,
             result.sst_second.info.get("cond_var_Z", 0.0))
    return EXIT_OK


def cmd_sample(args):
    cfg = _config(args) if args.config else None
    run = Path(args.run)
    samples, _ = sample_command(run, cfg, seed=args.seed, count=args.count, out_dir=args.out)
    log.info("wrote %d samples under %s", len(samples), Path(args.out or run) / "samples")
    return EXIT_OK


def cmd_diagnose(args):
    cfg = _config(args) if args.config else None
    summary = diagnose(Path(args.run), cfg, out_dir=args.out)
    inv = summary["invariance"]
    print(f"max projection discrepancy {inv['max_projection_discrepancy']:.3e} "
          f"(shared column space: {inv['shared_column_space']})")
    print(f"max residual leakage {inv['max_residual_leakage']:.3e}")
    for name, value in summary["condition_numbers"].items():
        print(f"condition number {name}: {value:.3e}")
    print(f"PSD violations before projection: {summary['psd_violations']}")
    return EXIT_OK


def cmd_validate(args):
    cfg = _config(args)
    inp = cfg.inputs
    sst = load_field_bundle(inp.sst)
    sic = load_field_bundle(inp.sic)
    check_matching(sst, sic)
    records = load_observation_table(inp.observations)
    if inp.extents:
        load_extent_table(inp.extents, sst.grid)
    print(f"ok: m={sst.m} n={sst.n} p={sst.p}, {records.d} observations")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="coexproc", description="Joint SST/SIC reconstruction from ensembles "
                                     "and observations.", epilog="exit codes: 0 ok, 2 schema/input, 3 numerical, 4 I/O")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help=f"BLAS threads (default ${THREADS_ENV})")
    common.add_argument("--verbose", "-v", action="store_true")
    common.add_argument("--seed", type=int, default=None, help="sampling seed override")
    common.add_argument("--out", default=None, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="run the full reconstruction")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sample", parents=[common], help="draw plausible joint samples from a run")
    p.add_argument("--run", required=True, help="directory written by 'fit'")
    p.add_argument("--config", default=None, help="config (defaults to the run's copy)")
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("diagnose", parents=[common], help="write diagnostic tables for a run")
    p.add_argument("--run", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("validate", parents=[common], help="schema-check the configured inputs")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with thread_limit(args.threads):
            return args.func(args)
    except Exception as exc:
        code = exit_code(exc)
        if code is None:
            raise
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            log.exception("details")
        return code


if __name__ == "__main__":
    sys.exit(main())
