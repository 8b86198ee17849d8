"""Reality model for a dependent field driven by the primary field.

Given a primary field ``x`` (``n`` months on ``p`` locations) the dependent
field is ``Y*(x) = Psi(x) theta_bar + phi(x) M(beta) + Psi(x) U_Theta`` where

* ``Psi(x)`` is the block design applying the I-spline basis location by
  location (``(n p) x (l p)``),
* ``Theta`` holds the principal-component columns of the spline coefficients
  and ``phi(x) = Psi(x) Theta``,
* ``theta_bar`` is the ensemble-mean coefficient vector the components are
  measured from,
* ``U_Theta`` has mean zero and variance ``I_l ⊗ V_US`` (Wendland).

The first stage plugs in adjusted beliefs about ``M(beta)``; the second
stage adjusts by a month/hemisphere selection of the field.  Covariances are
kept factored; entries are assembled only for requested index sets.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .basis import (ISplineBasis, SpatialBasis, WendlandParams, build_designs, fit_theta_hat,
                    fitted_values, hetero_residual_var, pca_spatial_basis, wendland_gram)
from .coex_field import COND_WARN
from .errors import ConditioningWarning, InvalidInputError
from .grid import Grid, canonical_month
from .hier_process import (GroupData, HierPrior, adjust_groups, extract_population, project_all)
from .linalg import distance_matrix, pinv, psd_project, sym_sqrt, symmetrize

FIRST_STAGE = "ensemble-adjusted"
SECOND_STAGE = "data-adjusted"

PROCESS_WENDLAND = WendlandParams(kappa2=0.3, c=4.0, tau=6.0)
EXTENT_CORRELATION = WendlandParams(kappa2=1.0, c=0.3, tau=6.0)


def process_design(designs, columns):
    """``phi(x) = Psi(x) Theta`` without forming ``Psi(x)``.

    ``designs`` is ``(n, p, l)``; ``columns`` is ``(l p, k)`` coefficient-major.
    Returns ``(n p, k)``, month-major rows.
    """
    G = np.asarray(designs, dtype=float)
    n, p, ell = G.shape
    cols = np.asarray(columns, dtype=float)
    if cols.shape[0] != ell * p:
        raise InvalidInputError(f"basis has {cols.shape[0]} rows, expected l*p = {ell * p}")
    return np.einsum("tsa,asj->tsj", G, cols.reshape(ell, p, -1)).reshape(n * p, -1)


def spline_design_dense(designs):
    """Dense ``Psi(x)`` (``(n p) x (l p)``); small problems and tests only."""
    G = np.asarray(designs, dtype=float)
    n, p, ell = G.shape
    out = np.zeros((n * p, ell * p))
    rows = np.arange(n * p)
    s = rows % p
    for a in range(ell):
        out[rows, a * p + s] = G[:, :, a].reshape(-1)
    return out


@dataclass(frozen=True)
class RealityProcessSpec:
    """Everything needed to map a primary field to beliefs about the dependent one."""

    basis: ISplineBasis
    spatial: SpatialBasis
    grid: Grid
    month_labels: tuple
    discrepancy_wendland: WendlandParams = PROCESS_WENDLAND
    dist_scale: float = 1.0

    @property
    def n(self):
        return len(self.month_labels)

    @property
    def p(self):
        return self.grid.p

    @property
    def k(self):
        return self.spatial.k

    @property
    def effective_wendland(self):
        """Discrepancy parameters as applied: in radians (``dist_scale == 1``)
        the support range is capped at ``pi``, the largest great-circle distance."""
        w = self.discrepancy_wendland
        if self.dist_scale == 1.0 and w.c > np.pi:
            return WendlandParams(w.kappa2, np.pi, w.tau)
        return w

    @cached_property
    def var_US(self):
        """Per-coefficient spatial discrepancy variance, PSD-projected.

        Support ranges near or beyond ``pi`` are not guaranteed positive
        definite on the sphere, so tiny negative eigenvalues are clipped.
        """
        K = wendland_gram(self.grid.lats, self.grid.lons, self.effective_wendland, self.dist_scale)
        return psd_project(K, tol=0.0)

    def designs(self, x_star):
        x = np.asarray(x_star, dtype=float).reshape(-1)
        if x.size != self.n * self.p:
            raise InvalidInputError(f"field has length {x.size}, expected n*p = {self.n * self.p}")
        return build_designs(self.basis, x.reshape(self.n, self.p))


@dataclass(frozen=True)
class ProcessReconstruction:
    """Factored beliefs about the dependent field at a fixed primary field.

    ``cov = phi var_M phi' + Psi (I ⊗ V_US) Psi' - C S C'`` where the last
    term (from the data update) is present only in the second stage, with
    ``C`` the cross covariance to the observations and ``S`` the
    pseudo-inverse of their variance.
    """

    mean_raw: np.ndarray
    phi: np.ndarray
    var_M: np.ndarray
    designs: np.ndarray
    var_US: np.ndarray
    grid: Grid
    month_labels: tuple
    stage: str = FIRST_STAGE
    cross: np.ndarray = None
    obs_precision: np.ndarray = None
    info: dict = field(default_factory=dict, compare=False)

    @property
    def n(self):
        return self.designs.shape[0]

    @property
    def p(self):
        return self.designs.shape[1]

    @property
    def mean(self):
        """Concentrations clamped to ``[0, 1]`` (the internal mean is unclamped)."""
        return np.clip(self.mean_raw, 0.0, 1.0)

    def _locate(self, idx):
        idx = np.arange(self.n * self.p) if idx is None else np.asarray(idx, dtype=int).reshape(-1)
        return idx, idx // self.p, idx % self.p

    def cov_block(self, rows=None, cols=None):
        """Covariance entries for flat index sets (``None`` means all)."""
        r, tr, sr = self._locate(rows)
        c, tc, sc = self._locate(cols)
        out = self.phi[r] @ self.var_M @ self.phi[c].T
        out += self.var_US[np.ix_(sr, sc)] * (self.designs[tr, sr] @ self.designs[tc, sc].T)
        if self.cross is not None:
            out -= self.cross[r] @ self.obs_precision @ self.cross[c].T
        return out

    def marginal_var(self):
        G = self.designs.reshape(self.n * self.p, -1)
        s = np.tile(np.arange(self.p), self.n)
        v = np.einsum("ij,jk,ik->i", self.phi, self.var_M, self.phi)
        v += np.diag(self.var_US)[s] * np.einsum("ia,ia->i", G, G)
        if self.cross is not None:
            v -= np.einsum("ij,jk,ik->i", self.cross, self.obs_precision, self.cross)
        return np.clip(v, 0.0, None)

    def cov_dense(self):
        return symmetrize(self.cov_block())


def first_update_process(x_star, pop, spec):
    """Beliefs about ``Y*(x_star)`` after adjusting by the ensemble coefficients.

    ``pop`` is the adjusted ``(mean, variance)`` of ``M(beta)``.
    """
    mean_M, var_M = (np.asarray(a, dtype=float) for a in pop)
    mean_M = mean_M.reshape(-1)
    var_M = np.atleast_2d(var_M)
    if mean_M.size != spec.k or var_M.shape != (spec.k, spec.k):
        raise InvalidInputError(f"population beliefs must have dimension k = {spec.k}")
    G = spec.designs(x_star)
    phi = process_design(G, spec.spatial.columns)
    mean = fitted_values(spec.spatial.center, G).reshape(-1) + phi @ mean_M
    return ProcessReconstruction(mean, phi, symmetrize(var_M), G, spec.var_US, spec.grid,
                                 tuple(spec.month_labels))


@dataclass(frozen=True)
class Selector:
    """Row selector: entry ``s`` of the output is entry ``indices[s]`` of the input."""

    indices: np.ndarray
    size: int

    def __matmul__(self, v):
        return np.asarray(v)[self.indices]

    def matrix(self):
        H = np.zeros((self.indices.size, self.size))
        H[np.arange(self.indices.size), self.indices] = 1.0
        return H


def build_H_Y(month_labels, hemispheres, north="Feb", south="Aug"):
    """Pick the ``north`` month at northern locations and ``south`` elsewhere.

    ``hemispheres`` is a sequence of ``'N'``/``'S'`` labels (see
    :meth:`Grid.hemisphere`).  Flat indices are ``month * p + location``.
    """
    hemi = np.asarray(hemispheres).reshape(-1)
    p = hemi.size
    canon = []
    for label in month_labels:
        try:
            canon.append(canonical_month(label))
        except InvalidInputError:
            canon.append(None)
    months = {}
    for tag, want in (("N", north), ("S", south)):
        if np.any(hemi == tag):
            if want not in canon:
                raise InvalidInputError(f"month {want} missing from labels {list(month_labels)}")
            months[tag] = canon.index(want)
    if not set(np.unique(hemi)) <= {"N", "S"}:
        raise InvalidInputError("hemisphere labels must be 'N' or 'S'")
    t = np.array([months[h] for h in hemi], dtype=int)
    return Selector(t * p + np.arange(p), len(month_labels) * p)


@dataclass(frozen=True)
class ExtentObservations:
    """Binary inside-extent indicator per grid location plus its error model."""

    indicator: np.ndarray
    lats: np.ndarray
    lons: np.ndarray
    sd_min: float = 0.02
    sd_max: float = 0.5
    length: float = 0.1
    correlation: WendlandParams = EXTENT_CORRELATION
    dist_scale: float = 1.0
    north_month: str = "Feb"
    south_month: str = "Aug"

    def __post_init__(self):
        z = np.asarray(self.indicator, dtype=float).reshape(-1)
        if not np.all((z == 0.0) | (z == 1.0)):
            raise InvalidInputError("extent indicator must be 0 or 1")
        lats = np.asarray(self.lats, dtype=float).reshape(-1)
        lons = np.asarray(self.lons, dtype=float).reshape(-1)
        if lats.size != z.size or lons.size != z.size:
            raise InvalidInputError("one location per indicator entry required")
        if not self.sd_max >= self.sd_min > 0:
            raise InvalidInputError("need sd_max >= sd_min > 0")
        if not self.length > 0:
            raise InvalidInputError("length scale must be positive")
        object.__setattr__(self, "indicator", z)
        object.__setattr__(self, "lats", lats)
        object.__setattr__(self, "lons", lons)

    @property
    def p(self):
        return self.indicator.size


def boundary_distance(lats, lons, indicator):
    """Distance (radians) from each location to the extent edge.

    Taken as half the great-circle distance to the nearest location with the
    opposite flag, i.e. to the midpoint where the edge is assumed to lie;
    ``pi`` when every flag is equal.
    """
    z = np.asarray(indicator).reshape(-1)
    inside = z == 1
    out = np.full(z.size, np.pi)
    if inside.all() or not inside.any():
        return out
    D = distance_matrix(lats[inside], lons[inside], lats[~inside], lons[~inside])
    out[inside] = 0.5 * D.min(axis=1)
    out[~inside] = 0.5 * D.min(axis=0)
    return out


def extent_error_model(obs, distances=None):
    """Marginal sd matrix ``K`` and correlation ``cor``; ``var[W] = K cor K``."""
    dist = boundary_distance(obs.lats, obs.lons, obs.indicator) if distances is None \
        else np.asarray(distances, dtype=float).reshape(-1)
    if dist.size != obs.p or np.any(dist < 0):
        raise InvalidInputError("boundary distances must be nonnegative, one per location")
    sd = obs.sd_min + (obs.sd_max - obs.sd_min) * np.exp(-dist / obs.length)
    cor = wendland_gram(obs.lats, obs.lons, obs.correlation, obs.dist_scale) / obs.correlation.kappa2
    return np.diag(sd), cor


def second_update_process(rec, obs, cond_warn=COND_WARN, rel_tol=None):
    """Adjust first-stage beliefs by the extent indicator.

    Only the ``p`` selected entries of the covariance (plus the ``(n p) x p``
    cross block) are assembled.
    """
    if rec.stage != FIRST_STAGE:
        raise InvalidInputError("second update expects a first-stage reconstruction")
    if obs.p != rec.p:
        raise InvalidInputError(f"extent covers {obs.p} locations, field has {rec.p}")
    H = build_H_Y(rec.month_labels, rec.grid.hemisphere(), obs.north_month, obs.south_month)
    K, cor = extent_error_model(obs)
    var_W = K @ cor @ K
    C = rec.cov_block(None, H.indices)
    var_Z = symmetrize(C[H.indices] + var_W)
    cond = float(np.linalg.cond(var_Z))
    if not np.isfinite(cond) or cond > cond_warn:
        warnings.warn(f"extent variance condition number {cond:.3e} exceeds {cond_warn:.1e}",
                      ConditioningWarning, stacklevel=2)
    S = symmetrize(pinv(var_Z, rel_tol))
    resid = obs.indicator - H @ rec.mean_raw
    mean = rec.mean_raw + C @ (S @ resid)
    info = dict(rec.info, n_obs=obs.p, cond_var_Z=cond)
    return ProcessReconstruction(mean, rec.phi, rec.var_M, rec.designs, rec.var_US, rec.grid,
                                 rec.month_labels, SECOND_STAGE, C, S, info)


# -- fitting the process model from a joint ensemble -------------------------

@dataclass(frozen=True)
class ProcessFit:
    """Fitted process model: spec, member groups and adjusted population beliefs."""

    spec: RealityProcessSpec
    groups: list
    beta_hats: object
    prior: HierPrior
    adjusted: object

    @property
    def population(self):
        return extract_population(self.adjusted)


def member_groups(sst_members, sic_members, spec, resid_kwargs=None):
    """Regression data for every member: design, centred response, residual variance."""
    resid_kwargs = resid_kwargs or {}
    groups = []
    for x, y in zip(sst_members, sic_members):
        G = spec.designs(x)
        Phi = process_design(G, spec.spatial.columns)
        resp = np.asarray(y, dtype=float).reshape(-1) - fitted_values(spec.spatial.center, G).reshape(-1)
        groups.append(GroupData(Phi, resp, hetero_residual_var(np.asarray(x).reshape(-1), **resid_kwargs)))
    return groups


def fit_process(sst_members, sic_members, grid, month_labels, basis=None, energy=0.95, alpha2=1.0,
                discrepancy_wendland=PROCESS_WENDLAND, dist_scale=1.0, resid_kwargs=None, fit_rel_tol=1e-3,
                monotone=None):
    """Fit the coefficient basis and adjust the coefficient hierarchy.

    ``sst_members`` and ``sic_members`` are ``(m, n p)``.  The prior mean of
    ``M(beta)`` is the average projected coefficient vector and
    ``var[beta_i]`` is the diagonal of component variances.
    """
    basis = basis or ISplineBasis()
    X = np.atleast_2d(np.asarray(sst_members, dtype=float))
    Y = np.atleast_2d(np.asarray(sic_members, dtype=float))
    n, p = len(month_labels), grid.p
    if X.shape != Y.shape or X.shape[1] != n * p:
        raise InvalidInputError("primary and dependent ensembles must both be (m, n*p)")
    thetas = np.array([
        fit_theta_hat(y.reshape(n, p), build_designs(basis, x.reshape(n, p)), fit_rel_tol, monotone,
                      int(basis.include_intercept)) for x, y in zip(X, Y)
    ])
    spatial = pca_spatial_basis(thetas, energy)
    spec = RealityProcessSpec(basis, spatial, grid, tuple(month_labels), discrepancy_wendland, dist_scale)
    groups = member_groups(X, Y, spec, resid_kwargs)
    bh = project_all(groups)
    prior = HierPrior.from_eigenvalues(spatial.eigenvalues, alpha2, bh.beta_hats.mean(axis=0))
    return ProcessFit(spec, groups, bh, prior, adjust_groups(groups, prior))


@dataclass(frozen=True)
class ProcessPipeline:
    """Callable mapping a primary field to both stages of dependent-field beliefs."""

    spec: RealityProcessSpec
    pop_mean: np.ndarray
    pop_var: np.ndarray
    extent: ExtentObservations = None

    def first(self, x_star):
        return first_update_process(x_star, (self.pop_mean, self.pop_var), self.spec)

    def __call__(self, x_star):
        rec = self.first(x_star)
        if self.extent is None:
            return rec
        return second_update_process(rec, self.extent)


# -- plausible-set sampling ---------------------------------------------------

@dataclass(frozen=True)
class PlausibleSample:
    x_sample: np.ndarray
    y_sample: np.ndarray
    y_raw: np.ndarray
    seed: int
    index: int
    z_x: np.ndarray
    z_y: np.ndarray


def _draw(rng, size, bound, scalar_z):
    if scalar_z:
        return np.full(size, rng.uniform(-bound, bound)) if bound > 0 else np.zeros(size)
    return rng.uniform(-bound, bound, size) if bound > 0 else np.zeros(size)


def fit_to_box(dev, sd, bound):
    """Shrink a deviation uniformly so that ``|dev| <= bound * sd`` componentwise.

    A single scale factor keeps the deviation inside the span of the
    square-root columns; components with zero sd are set to zero.
    """
    dev = np.array(dev, dtype=float)
    if bound <= 0:
        return np.zeros_like(dev)
    tiny = 1e-12 * max(float(sd.max(initial=0.0)), np.finfo(float).tiny)
    live = sd > tiny
    dev[~live] = 0.0
    if not live.any():
        return dev
    excess = np.max(np.abs(dev[live]) / (bound * sd[live]))
    return dev / excess if excess > 1.0 else dev


def field_sqrt_apply(rec, z):
    """``(var_T ⊗ var_S)^{1/2} z`` via symmetric square roots of the factors."""
    RT = sym_sqrt(rec.var_temporal)
    RS = sym_sqrt(rec.var_spatial)
    return (RT @ z.reshape(rec.n, rec.p) @ RS.T).reshape(-1)


def sample_plausible(sst_rec, sic_pipeline, count, seed, bound=3.0, scalar_z=False, in_box=True):
    """Joint samples from the plausible box around both adjusted means.

    Primary deviations use the Kronecker square root; the dependent field is
    then re-derived at each sampled primary field and perturbed with the
    symmetric square root of its adjusted covariance.  Sample ``j`` uses the
    generator seeded by ``(seed, j)`` so samples are independent of
    ``count`` and of each other.  With ``in_box`` the deviations are shrunk
    (see :func:`fit_to_box`) so every pre-clamp component stays within
    ``bound`` marginal sds.
    """
    if count < 0:
        raise InvalidInputError("sample count must be nonnegative")
    if bound < 0:
        raise InvalidInputError("bound must be nonnegative")
    x_sd = np.sqrt(np.clip(sst_rec.marginal_var(), 0.0, None))
    out = []
    for j in range(int(count)):
        rng = np.random.default_rng([int(seed), j])
        z_x = _draw(rng, sst_rec.mean.size, bound, scalar_z)
        dev_x = field_sqrt_apply(sst_rec, z_x)
        if in_box:
            dev_x = fit_to_box(dev_x, x_sd, bound)
        x = sst_rec.mean + dev_x
        y_rec = sic_pipeline(x)
        z_y = _draw(rng, y_rec.mean_raw.size, bound, scalar_z)
        if bound > 0:
            dev_y = sym_sqrt(y_rec.cov_dense(), tol=1e-8) @ z_y
        else:
            dev_y = np.zeros_like(z_y)
        if in_box:
            dev_y = fit_to_box(dev_y, np.sqrt(y_rec.marginal_var()), bound)
        y_raw = y_rec.mean_raw + dev_y
        out.append(PlausibleSample(x, np.clip(y_raw, 0.0, 1.0), y_raw, int(seed), j, z_x, z_y))
    return out
