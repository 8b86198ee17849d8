"""End-to-end reconstruction: SST by ensemble mean and point data, then SIC
given the reconstructed SST by ensemble coefficients and extent data.

:func:`reconstruct` is the in-memory pipeline; :func:`run_reconstruction`,
:func:`sample_command` and :func:`diagnose` wrap it with file I/O.
"""

from __future__ import annotations

import json
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .basis import ISplineBasis, SpatialBasis, WendlandParams, ispline_eval
from .coex_field import (DATA_ADJUSTED, FieldEnsemble, FieldReconstruction, PseudoObsConfig, add_pseudo_observations,
                         first_update_field, fit_field_spec, make_observations, nordic_blocks,
                         second_update_field)
from .coex_process import (ExtentObservations, ProcessPipeline, RealityProcessSpec, fit_process,
                           sample_plausible, second_update_process)
from .config import RunConfig, dump_config, load_config
from .errors import CoexError, SchemaError, StageError
from .grid import Grid
from .hier_process import check_projection_invariance, extract_population
from .io import (load_extent_table, load_field_bundle, load_observation_table, sha256_file,
                 write_field_bundle, write_grid_csv, write_table)
from .linalg import min_eigenvalue

DIAGNOSTIC_COLUMNS = {
    "invariance.csv": ["group", "projection_discrepancy", "residual_leakage"],
    "conditioning.csv": ["stage", "condition_number"],
    "beta_hat.csv": ["group", "component", "beta_hat", "adjusted_mean", "adjusted_sd", "residual_norm"],
    "curves.csv": ["location", "lat", "lon", "curve", "sst", "sic", "sd"],
    "psd_log.csv": ["matrix", "min_eigenvalue", "projected"],
}


@contextmanager
def stage(name, timings):
    """Time a block and tag any failure with the stage name."""
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except (CoexError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - start


@dataclass
class PipelineResult:
    sst_first: FieldReconstruction
    sst_second: FieldReconstruction
    process: object
    sic_first: object
    sic_second: object
    invariance: object
    observations: object
    extent: ExtentObservations
    timings: dict = field(default_factory=dict)
    psd_log: list = field(default_factory=list)

    @property
    def sic_pipeline(self):
        pop_mean, pop_var = extract_population(self.process.adjusted)
        return ProcessPipeline(self.process.spec, pop_mean, pop_var, self.extent)


def spline_basis(cfg):
    s = cfg.process.spline
    return ISplineBasis(s.order, tuple(s.knots), tuple(s.boundary), s.intercept)


def wendland_params(block):
    return WendlandParams(block.kappa2, block.c, block.tau)


def build_observations(records, grid, month_labels, cfg):
    """Observation set from table records, bias blocks and pseudo-observations."""
    blocks = list(records.bias_blocks)
    if cfg.bias.auto_nordic:
        auto = nordic_blocks(records.lats, records.lons, cfg.bias.nordic_lat_min, tuple(cfg.bias.nordic_lon_window))
        blocks = [b if b is not None else a for b, a in zip(blocks, auto)]
    bias = np.array([
        mu if np.isfinite(mu) else float(cfg.bias.blocks.get(b, 0.0)) if b is not None else 0.0
        for mu, b in zip(records.bias_means, blocks)
    ])
    obs = make_observations(records.lats, records.lons, records.values, records.sds, grid, month_labels,
                            list(records.seasons), list(records.custom_weights), bias, blocks,
                            cfg.bias.neighbours)
    pc = cfg.pseudo
    pseudo = PseudoObsConfig(pc.count, tuple(pc.latitudes), pc.value, pc.sd, pc.season)
    return add_pseudo_observations(obs, grid, month_labels, pseudo)


def extent_observations(indicator, grid, cfg):
    e = cfg.extent
    return ExtentObservations(indicator, grid.lats, grid.lons, e.sd_min, e.sd_max, e.length,
                              WendlandParams(e.wendland.kappa2, e.wendland.c, e.wendland.tau),
                              e.dist_scale, e.north_month, e.south_month)


def check_matching(sst, sic):
    if sst.n != sic.n or sst.p != sic.p or sst.m != sic.m:
        raise SchemaError(f"SST bundle is m={sst.m}, n={sst.n}, p={sst.p}; SIC bundle is m={sic.m}, n={sic.n}, p={sic.p}")
    if not (np.array_equal(sst.grid.lats, sic.grid.lats) and np.array_equal(sst.grid.lons, sic.grid.lons)):
        raise SchemaError("SST and SIC bundles use different grids")
    if sst.labels != sic.labels:
        raise SchemaError("SST and SIC bundles list different members (or in a different order)")


def reconstruct(sst, sic, records, extent_indicator, cfg=None):
    """Run both field pathways in memory; see :class:`PipelineResult`."""
    cfg = cfg or RunConfig()
    timings, psd_log = {}, []
    tol = cfg.tolerance
    with stage("validate", timings):
        check_matching(sst, sic)
    with stage("estimate_var_MX", timings):
        spec = fit_field_spec(sst, cfg.field.alpha2, wendland_params(cfg.field.wendland), cfg.field.dist_scale,
                              temporal=cfg.field.temporal)
    with stage("first_update_field", timings):
        sst1 = first_update_field(sst, spec)
        psd_log.append(("sst_ensemble_adjusted_spatial", min_eigenvalue(sst1.var_spatial), False))
    with stage("second_update_field", timings):
        obs = build_observations(records, sst.grid, sst.month_labels, cfg)
        sst2 = second_update_field(sst1, obs, tol.cond_warn, tol.pinv_rel_tol)
        lo = sst2.info.get("min_eig_pre_projection", min_eigenvalue(sst2.var_spatial))
        psd_log.append(("sst_data_adjusted_spatial", lo, lo < 0))
    with stage("basis_fit", timings):
        fit = fit_process(sst.members, sic.members, sst.grid, sst.month_labels, spline_basis(cfg),
                          cfg.process.pca_energy, cfg.process.alpha2, wendland_params(cfg.process.wendland),
                          cfg.process.dist_scale, vars(cfg.process.resid).copy(), cfg.process.spline.fit_rel_tol,
                          cfg.process.spline.monotone)
    with stage("adjust_hierarchy", timings):
        invariance = check_projection_invariance(fit.groups, tol.invariance)
        psd_log.append(("hierarchy_adjusted_B", min_eigenvalue(fit.adjusted.adj_var_B), False))
    extent = None
    with stage("first_update_process", timings):
        if extent_indicator is not None:
            extent = extent_observations(extent_indicator, sst.grid, cfg)
        pop_mean, pop_var = extract_population(fit.adjusted)
        sic1 = ProcessPipeline(fit.spec, pop_mean, pop_var).first(sst2.mean)
    with stage("second_update_process", timings):
        sic2 = second_update_process(sic1, extent, tol.cond_warn, tol.pinv_rel_tol) if extent is not None else sic1
        if sic2.cross is not None:
            idx = np.arange(sic2.p)
            psd_log.append(("sic_data_adjusted_block", min_eigenvalue(sic2.cov_block(idx, idx)), False))
    return PipelineResult(sst1, sst2, fit, sic1, sic2, invariance, obs, extent, timings, psd_log)


# -- emission -----------------------------------------------------------------

def _month_tag(t, label):
    return f"{t + 1:02d}_{label}"


def emit_reconstruction(result, out_dir):
    """Per-month mean and variance grids for both stages of both fields."""
    out_dir = Path(out_dir)
    written = []
    grid = result.process.spec.grid
    months = result.process.spec.month_labels
    fields = {
        ("sst", result.sst_first.stage): (result.sst_first.mean, result.sst_first.marginal_var()),
        ("sst", result.sst_second.stage): (result.sst_second.mean, result.sst_second.marginal_var()),
        ("sic", result.sic_first.stage): (result.sic_first.mean, result.sic_first.marginal_var()),
    }
    if result.sic_second is not result.sic_first:
        fields[("sic", result.sic_second.stage)] = (result.sic_second.mean, result.sic_second.marginal_var())
    p = grid.p
    for (name, stage_name), (mean, var) in fields.items():
        for t, label in enumerate(months):
            sl = slice(t * p, (t + 1) * p)
            base = out_dir / "fields" / name / stage_name
            written.append(write_grid_csv(base / f"mean_{_month_tag(t, label)}.csv", grid, {"value": mean[sl]}))
            written.append(write_grid_csv(base / f"variance_{_month_tag(t, label)}.csv", grid, {"value": var[sl]}))
    delta = result.sst_second.mean - result.sst_first.mean
    for t, label in enumerate(months):
        sl = slice(t * p, (t + 1) * p)
        written.append(write_grid_csv(out_dir / "fields" / "sst" / f"update_contribution_{_month_tag(t, label)}.csv",
                                      grid, {"value": delta[sl]}))
    return written


def save_state(result, path):
    fit = result.process
    spec = fit.spec
    pop_mean, pop_var = extract_population(fit.adjusted)
    arrays = dict(
        grid_lats=spec.grid.lats, grid_lons=spec.grid.lons, month_labels=np.array(spec.month_labels),
        sst1_mean=result.sst_first.mean, sst1_var_temporal=result.sst_first.var_temporal,
        sst1_var_spatial=result.sst_first.var_spatial,
        sst2_mean=result.sst_second.mean, sst2_var_temporal=result.sst_second.var_temporal,
        sst2_var_spatial=result.sst_second.var_spatial,
        spatial_columns=spec.spatial.columns, spatial_eigenvalues=spec.spatial.eigenvalues,
        spatial_center=spec.spatial.center, pop_mean=pop_mean, pop_var=pop_var,
        extent=np.zeros(0) if result.extent is None else result.extent.indicator,
        beta_hats=fit.beta_hats.beta_hats, residual_norms=fit.beta_hats.projection_residual_norms,
        adj_mean_B=fit.adjusted.adj_mean_B, adj_var_B=fit.adjusted.adj_var_B,
        projection_discrepancy=result.invariance.projection_discrepancies,
        residual_leakage=result.invariance.residual_leakage,
        cond=np.array([result.sst_second.info.get("cond_var_Z", 0.0), result.sic_second.info.get("cond_var_Z", 0.0)]),
        psd_names=np.array([r[0] for r in result.psd_log]),
        psd_values=np.array([r[1] for r in result.psd_log], dtype=float),
        psd_projected=np.array([r[2] for r in result.psd_log], dtype=bool),
    )
    np.savez(path, **arrays)
    return path


@dataclass(frozen=True)
class RunState:
    """Reloaded run artifacts, enough for sampling and diagnostics."""

    arrays: dict
    cfg: RunConfig

    @property
    def grid(self):
        return Grid(self.arrays["grid_lats"], self.arrays["grid_lons"])

    @property
    def month_labels(self):
        return tuple(str(s) for s in self.arrays["month_labels"])

    def sst_reconstruction(self):
        a = self.arrays
        return FieldReconstruction(a["sst2_mean"], a["sst2_var_temporal"], a["sst2_var_spatial"], DATA_ADJUSTED)

    def process_spec(self):
        a = self.arrays
        spatial = SpatialBasis(a["spatial_columns"], a["spatial_eigenvalues"], a["spatial_center"])
        return RealityProcessSpec(spline_basis(self.cfg), spatial, self.grid, self.month_labels,
                                  wendland_params(self.cfg.process.wendland), self.cfg.process.dist_scale)

    def sic_pipeline(self):
        a = self.arrays
        extent = extent_observations(a["extent"], self.grid, self.cfg) if a["extent"].size else None
        return ProcessPipeline(self.process_spec(), a["pop_mean"], a["pop_var"], extent)


def load_state(run_dir, cfg=None):
    run_dir = Path(run_dir)
    if cfg is None:
        cfg = load_config(run_dir / "config.cfg")
    with np.load(run_dir / "state.npz") as data:
        arrays = {k: data[k] for k in data.files}
    return RunState(arrays, cfg)


def _versions():
    return {"coexproc": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _output_hashes(out_dir):
    out_dir = Path(out_dir)
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.suffix == ".csv")
    return {str(p.relative_to(out_dir)): sha256_file(p) for p in files}


def run_reconstruction(cfg, out_dir=None, seed=None):
    """Load inputs, run :func:`reconstruct`, write outputs and a manifest.

    Returns the in-memory :class:`PipelineResult`.
    """
    out_dir = Path(out_dir or cfg.output.dir)
    if seed is not None:
        cfg.sample.seed = int(seed)
    timings = {}
    inp = cfg.inputs
    for name in ("sst", "sic", "observations"):
        if not getattr(inp, name):
            raise SchemaError(f"config inputs.{name} is not set")
    with stage("load", timings):
        sst = load_field_bundle(inp.sst)
        sic = load_field_bundle(inp.sic)
        records = load_observation_table(inp.observations)
        indicator = load_extent_table(inp.extents, sst.grid) if inp.extents else None
    result = reconstruct(sst, sic, records, indicator, cfg)
    timings.update(result.timings)
    out_dir.mkdir(parents=True, exist_ok=True)
    with stage("emit", timings):
        (out_dir / "config.cfg").write_text(dump_config(cfg))
        emit_reconstruction(result, out_dir)
        save_state(result, out_dir / "state.npz")
    if cfg.sample.count > 0:
        with stage("sample", timings):
            write_samples(result.sst_second, result.sic_pipeline, cfg, out_dir)
    inputs = {name: sha256_file(getattr(inp, name)) for name in ("sst", "sic", "observations", "extents")
              if getattr(inp, name)}
    manifest = {
        "config_sha256": cfg.digest(),
        "inputs_sha256": inputs,
        "outputs_sha256": _output_hashes(out_dir),
        "versions": _versions(),
        "seed": cfg.sample.seed,
        "wall_time_s": {k: round(v, 6) for k, v in timings.items()},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    result.timings = timings
    return result


# -- sampling -----------------------------------------------------------------

def write_samples(sst_rec, sic_pipeline, cfg, out_dir, seed=None, count=None):
    """Write ``count`` joint samples as single-member field bundles."""
    seed = cfg.sample.seed if seed is None else int(seed)
    count = cfg.sample.count if count is None else int(count)
    spec = sic_pipeline.spec
    samples = sample_plausible(sst_rec, sic_pipeline, count, seed, cfg.sample.bound,
                               cfg.sample.scalar_z, cfg.sample.in_box)
    out = Path(out_dir) / "samples"
    paths = []
    for s in samples:
        tag = {"seed": s.seed, "draw": s.index, "bound": format(cfg.sample.bound, ".17g")}
        d = out / f"sample_{s.index:03d}"
        label = (f"sample{s.index:03d}",)
        for name, units, values in (("sst", "degC", s.x_sample), ("sic", "fraction", s.y_sample)):
            ens = FieldEnsemble(values[None, :], spec.n, spec.grid, label, spec.month_labels)
            paths.append(write_field_bundle(d / f"{name}.csv", ens, name, units, extra=tag))
    return samples, paths


def sample_command(run_dir, cfg=None, seed=None, count=None, out_dir=None):
    """Draw plausible samples from a completed run."""
    state = load_state(run_dir, cfg)
    return write_samples(state.sst_reconstruction(), state.sic_pipeline(), state.cfg, out_dir or run_dir,
                         seed, count)


# -- diagnostics --------------------------------------------------------------

def _monotone(values, tol=1e-12):
    diff = np.diff(values)
    if np.all(np.abs(diff) <= tol):
        return "constant"
    if np.all(diff >= -tol):
        return "nondecreasing"
    if np.all(diff <= tol):
        return "nonincreasing"
    return "none"


def curve_locations(state, locations=None):
    """Grid nodes nearest to the requested ``(lat, lon)`` pairs.

    With none requested, four nodes spread across the range of the
    reconstructed annual-mean SST are used.
    """
    grid = state.grid
    locations = locations if locations is not None else state.cfg.diagnose.locations
    if locations:
        return [int(np.argmin(grid.distances_to(la, lo)[0])) for la, lo in locations]
    annual = state.arrays["sst2_mean"].reshape(len(state.month_labels), grid.p).mean(axis=0)
    order = np.argsort(annual, kind="stable")
    picks = np.linspace(0, grid.p - 1, min(4, grid.p)).round().astype(int)
    return [int(order[i]) for i in picks]


def fitted_curves(state, locations, sst_values):
    """SIC-versus-SST curves from the population and each group's adjusted coefficients."""
    a = state.arrays
    basis = spline_basis(state.cfg)
    p = state.grid.p
    ell = basis.n_functions
    cols = a["spatial_columns"].reshape(ell, p, -1)
    center = a["spatial_center"].reshape(ell, p)
    B = a["spatial_columns"].shape[1]
    I = ispline_eval(basis, sst_values)
    mean_B, var_B = a["adj_mean_B"], a["adj_var_B"]
    m = mean_B.size // B - 1
    rows = []
    for s in locations:
        D = I @ cols[:, s, :]
        offset = I @ center[:, s]
        blocks = [(f"group{i + 1}", slice(i * B, (i + 1) * B)) for i in range(m)] + [("population", slice(m * B, None))]
        for name, sl in blocks:
            mu = offset + D @ mean_B[sl]
            sd = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", D, var_B[sl, sl], D), 0.0, None))
            rows.append((s, name, mu, sd))
    return rows


def diagnose(run_dir, cfg=None, locations=None, out_dir=None):
    """Write diagnostic tables and a JSON summary; returns the summary."""
    state = load_state(run_dir, cfg)
    a = state.arrays
    out = Path(out_dir or Path(run_dir) / "diagnostics")
    grid = state.grid
    tol = state.cfg.tolerance.invariance
    disc, leak = a["projection_discrepancy"], a["residual_leakage"]
    write_table(out / "invariance.csv", DIAGNOSTIC_COLUMNS["invariance.csv"],
                [(i + 1, float(d), float(lk)) for i, (d, lk) in enumerate(zip(disc, leak))])
    write_table(out / "conditioning.csv", DIAGNOSTIC_COLUMNS["conditioning.csv"],
                [("sst_observations", float(a["cond"][0])), ("sic_extent", float(a["cond"][1]))])
    k = a["spatial_columns"].shape[1]
    bh = a["beta_hats"]
    sd_B = np.sqrt(np.clip(np.diag(a["adj_var_B"]), 0.0, None))
    rows = []
    for i in range(bh.shape[0]):
        for j in range(k):
            idx = i * k + j
            rows.append((i + 1, j + 1, float(bh[i, j]), float(a["adj_mean_B"][idx]), float(sd_B[idx]),
                         float(a["residual_norms"][i])))
    write_table(out / "beta_hat.csv", DIAGNOSTIC_COLUMNS["beta_hat.csv"], rows)

    lo, hi = state.cfg.diagnose.sst_range
    t = np.linspace(lo, hi, state.cfg.diagnose.points)
    locs = curve_locations(state, locations)
    curve_rows, shapes = [], {}
    for s, name, mu, sd in fitted_curves(state, locs, t):
        shapes[f"{s}:{name}"] = _monotone(mu)
        curve_rows += [(s, float(grid.lats[s]), float(grid.lons[s]), name, float(tt), float(v), float(e))
                       for tt, v, e in zip(t, mu, sd)]
    write_table(out / "curves.csv", DIAGNOSTIC_COLUMNS["curves.csv"], curve_rows)
    write_table(out / "psd_log.csv", DIAGNOSTIC_COLUMNS["psd_log.csv"],
                [(str(n), float(v), bool(pr)) for n, v, pr in zip(a["psd_names"], a["psd_values"], a["psd_projected"])])
    summary = {
        "invariance": {"max_projection_discrepancy": float(disc.max()), "max_residual_leakage": float(leak.max()),
                       "tol": tol, "shared_column_space": bool(disc.max() <= tol),
                       "residuals_compatible": bool(leak.max() <= tol)},
        "condition_numbers": {"sst_observations": float(a["cond"][0]), "sic_extent": float(a["cond"][1])},
        "curve_shapes": shapes,
        "curve_locations": locs,
        "psd_violations": int(np.sum(a["psd_values"] < 0)),
        "columns": DIAGNOSTIC_COLUMNS,
    }
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
