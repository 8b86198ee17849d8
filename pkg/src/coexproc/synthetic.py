"""Synthetic worlds with known truth, for fixtures and coverage experiments.

SST members follow the exchangeable representation directly: a shared
spatial deviation plus member residuals, both constant over months, on top
of a latitude/season climatology.  The true field adds a Wendland
discrepancy to the shared term.  SIC is a monotone decreasing I-spline
function of SST at every location whose transition temperature varies
smoothly in space and across members.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import ISplineBasis, WendlandParams, ispline_eval, wendland_gram
from .config import RunConfig, dump_config
from .coex_field import FieldEnsemble, make_observations
from .grid import MONTHS, Grid, regular_grid
from .io import ObservationRecords, write_extent_table, write_field_bundle, write_observation_table
from .linalg import sym_sqrt

SHARED_WENDLAND = WendlandParams(kappa2=1.0, c=1.2, tau=6.0)
TRUTH_WENDLAND = WendlandParams(kappa2=1.61, c=0.92, tau=6.0)
TRANSITION_WENDLAND = WendlandParams(kappa2=1.0, c=1.5, tau=6.0)


def month_labels_for(n):
    if n == 12:
        return MONTHS
    if n == 2:
        return ("Feb", "Aug")
    picks = np.linspace(0, 11, n).round().astype(int)
    labels = [MONTHS[i] for i in picks]
    for need, slot in (("Feb", 0), ("Aug", -1)):
        if need not in labels:
            labels[slot] = need
    if len(set(labels)) != n:
        raise ValueError(f"cannot label {n} distinct months including Feb and Aug")
    return tuple(labels)


def climatology(grid, month_labels):
    """Cold poles, warm tropics and a hemispheric seasonal cycle, shape ``(n, p)``."""
    lat = np.deg2rad(grid.lats)
    month = np.array([MONTHS.index(m) if m in MONTHS else i for i, m in enumerate(month_labels)])
    season = np.cos(2 * np.pi * (month - 7) / 12.0)  # +1 in boreal summer
    base = -1.9 + 29.0 * np.cos(lat) ** 2
    amp = 3.0 * np.sin(lat)
    return base[None, :] + amp[None, :] * season[:, None]


def _gauss(rng, cov_root, size=None):
    z = rng.standard_normal(cov_root.shape[0] if size is None else (size, cov_root.shape[0]))
    return z @ cov_root.T


def transition_weights(basis, tau, width=1.5):
    """Mixing weights over the non-intercept splines centred near ``tau``.

    Each spline's centre is where it reaches one half.
    """
    grid_t = np.linspace(basis.boundary[0], basis.boundary[1], 2001)
    vals = ispline_eval(basis, grid_t)[:, int(basis.include_intercept):]
    centres = grid_t[np.argmax(vals >= 0.5, axis=0)]
    w = np.exp(-((centres[None, :] - np.atleast_1d(tau)[:, None]) ** 2) / (2 * width**2))
    return w / w.sum(axis=1, keepdims=True)


def sic_from_sst(basis, x, tau, width=1.5):
    """``1 - sum_a w_a(tau_s) I_a(x)`` evaluated location by location.

    ``x`` is ``(n, p)``, ``tau`` is ``(p,)``.
    """
    W = transition_weights(basis, tau, width)
    I = ispline_eval(basis, x)[..., int(basis.include_intercept):]
    return 1.0 - np.einsum("tsa,sa->ts", I, W)


@dataclass(frozen=True)
class World:
    grid: Grid
    month_labels: tuple
    sst_members: np.ndarray
    sic_members: np.ndarray
    x_true: np.ndarray
    y_true: np.ndarray
    observations: ObservationRecords
    extent: np.ndarray
    basis: ISplineBasis

    @property
    def n(self):
        return len(self.month_labels)

    @property
    def p(self):
        return self.grid.p

    def ensembles(self):
        labels = tuple(f"model{i + 1:02d}" for i in range(self.sst_members.shape[0]))
        return (FieldEnsemble(self.sst_members, self.n, self.grid, labels, self.month_labels),
                FieldEnsemble(self.sic_members, self.n, self.grid, labels, self.month_labels))


def make_world(n_lat=10, n_lon=20, n=12, m=8, d=30, seed=0, alpha2=1.0, obs_sd=0.5, sic_noise=0.01,
               basis=None, lat_range=(-75.0, 75.0), summer_fraction=0.3):
    """Draw one synthetic world (see module docstring)."""
    rng = np.random.default_rng(seed)
    basis = basis or ISplineBasis()
    grid = regular_grid(n_lat, n_lon, lat_range)
    months = month_labels_for(n)
    p = grid.p
    clim = climatology(grid, months)

    root_shared = sym_sqrt(wendland_gram(grid.lats, grid.lons, SHARED_WENDLAND), tol=1e-6)
    root_truth = sym_sqrt(wendland_gram(grid.lats, grid.lons, TRUTH_WENDLAND), tol=1e-6)
    shared = _gauss(rng, root_shared)
    resid = np.sqrt(alpha2) * _gauss(rng, root_shared, m)
    disc = _gauss(rng, root_truth)
    sst = clim[None] + (shared + resid)[:, None, :]
    x_true = clim + (shared + disc)[None, :]

    root_tau = sym_sqrt(wendland_gram(grid.lats, grid.lons, TRANSITION_WENDLAND), tol=1e-6)
    tau_centre = 1.0 + 0.8 * _gauss(rng, root_tau)
    tau_members = tau_centre[None, :] + 0.5 * _gauss(rng, root_tau, m)
    tau_true = tau_centre + 0.5 * _gauss(rng, root_tau)
    sic = np.stack([sic_from_sst(basis, sst[i], tau_members[i]) for i in range(m)])
    sic = sic + sic_noise * rng.standard_normal(sic.shape)
    y_true = sic_from_sst(basis, x_true, tau_true)

    # point observations of time-averaged truth plus error
    lats = rng.uniform(lat_range[0], lat_range[1], d)
    lons = rng.uniform(-180.0, 180.0, d)
    seasons = np.where(rng.uniform(size=d) < summer_fraction, "summer", "annual")
    obs = make_observations(lats, lons, np.zeros(d), np.full(d, obs_sd), grid, months, list(seasons))
    values = obs.apply(x_true.reshape(-1)) + obs_sd * rng.standard_normal(d)
    records = ObservationRecords(lats, lons, values, np.full(d, obs_sd), tuple(seasons), (None,) * d,
                                 (None,) * d, np.full(d, np.nan))

    north = months.index("Feb")
    south = months.index("Aug")
    picked = np.where(grid.lats >= 0, y_true[north], y_true[south])
    extent = (picked >= 0.5).astype(float)
    return World(grid, months, sst.reshape(m, -1), sic.reshape(m, -1), x_true.reshape(-1),
                 y_true.reshape(-1), records, extent, basis)


def world_config(sample_count=0, pseudo_count=0):
    """Config matching the synthetic generator (no pseudo-observations, no bias blocks)."""
    cfg = RunConfig()
    cfg.pseudo.count = pseudo_count
    cfg.bias.auto_nordic = False
    cfg.sample.count = sample_count
    return cfg


def write_world(world, directory, cfg=None):
    """Write a world as input files plus a ``run.cfg`` pointing at them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sst, sic = world.ensembles()
    write_field_bundle(directory / "sst.csv", sst, "sst", "degC", f"regular p={world.p}")
    write_field_bundle(directory / "sic.csv", sic, "sic", "fraction", f"regular p={world.p}")
    write_observation_table(directory / "observations.csv", world.observations)
    write_extent_table(directory / "extents.csv", world.grid, world.extent)
    cfg = cfg or world_config()
    cfg.inputs.sst = "sst.csv"
    cfg.inputs.sic = "sic.csv"
    cfg.inputs.observations = "observations.csv"
    cfg.inputs.extents = "extents.csv"
    (directory / "run.cfg").write_text(dump_config(cfg))
    return directory / "run.cfg"
