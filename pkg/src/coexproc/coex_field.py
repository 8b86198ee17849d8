"""Coexchangeable model for a single gridded field.

Members are second-order exchangeable, ``X_i = M(X) + R_i(X)`` with
``var[R] = alpha2 * var[M]``, and reality is ``X* = a M(X) + U_X``.  All
covariances are separable, ``temporal ⊗ spatial``, with the temporal factor
shared between ``var[X]`` and ``var[U_X]`` so both updates stay separable:

1. adjust by the ensemble mean ``Xbar`` (sufficient for the members);
2. adjust by observations ``Z = H X* + W`` where each row of ``H`` is a
   time average composed with a spatial interpolation.

The data update never forms an ``(n*p)``-square matrix; everything goes
through the ``d x d`` observation Gram from :func:`kron_quadform`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import WendlandParams, wendland_gram
from .errors import ConditioningWarning, DegenerateEnsembleError, InvalidInputError
from .grid import Grid, default_month_labels, season_weights
from .linalg import KroneckerOp, kron_quadform, pinv, psd_project, symmetrize

ENSEMBLE_ADJUSTED = "ensemble-adjusted"
DATA_ADJUSTED = "data-adjusted"
COND_WARN = 1e12


@dataclass(frozen=True)
class FieldEnsemble:
    """``m`` members of an ``n``-month field over a grid, flattened month-major."""

    members: np.ndarray
    n: int
    grid: Grid
    labels: tuple = ()
    month_labels: tuple = ()

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.members, dtype=float))
        n = int(self.n)
        if X.shape[1] != n * self.grid.p:
            raise InvalidInputError(f"members have length {X.shape[1]}, expected n*p = {n * self.grid.p}")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("ensemble contains non-finite values")
        labels = tuple(self.labels) or tuple(f"member{i + 1}" for i in range(X.shape[0]))
        months = tuple(self.month_labels) or default_month_labels(n)
        if len(labels) != X.shape[0] or len(months) != n:
            raise InvalidInputError("label counts do not match ensemble dimensions")
        X.setflags(write=False)
        object.__setattr__(self, "members", X)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "month_labels", months)

    @property
    def m(self):
        return self.members.shape[0]

    @property
    def p(self):
        return self.grid.p

    def member_fields(self, i):
        """Member ``i`` as an ``(n, p)`` array."""
        return self.members[i].reshape(self.n, self.p)


@dataclass(frozen=True)
class CoexFieldSpec:
    """Prior judgements for the field pathway.

    ``var_XT ⊗ var_XS`` is ``var[X_i] = (1 + alpha2) var[M(X)]``.  The
    discrepancy shares the temporal factor: ``var[U_X] = var_XT ⊗ V_U`` with
    ``V_U`` the Wendland Gram over the grid. ``incidence`` is the scalar
    ``a`` in ``X* = a M(X) + U_X``.
    """

    alpha2: float
    var_XT: np.ndarray
    var_XS: np.ndarray
    discrepancy_wendland: WendlandParams = field(default_factory=WendlandParams)
    discrepancy_mean: np.ndarray = None
    dist_scale: float = 1.0
    incidence: float = 1.0

    def __post_init__(self):
        if not self.alpha2 > 0:
            raise InvalidInputError("alpha2 must be positive")
        VT = symmetrize(self.var_XT)
        VS = symmetrize(self.var_XS)
        object.__setattr__(self, "var_XT", VT)
        object.__setattr__(self, "var_XS", VS)
        if self.discrepancy_mean is not None:
            mu = np.asarray(self.discrepancy_mean, dtype=float).reshape(-1)
            if mu.size != VT.shape[0] * VS.shape[0]:
                raise InvalidInputError("discrepancy mean must have length n*p")
            object.__setattr__(self, "discrepancy_mean", mu)

    @property
    def var_MS(self):
        """Spatial factor of ``var[M(X)]``."""
        return self.var_XS / (1.0 + self.alpha2)

    def discrepancy_spatial(self, grid):
        return wendland_gram(grid.lats, grid.lons, self.discrepancy_wendland, self.dist_scale)


@dataclass(frozen=True)
class FieldReconstruction:
    """Adjusted beliefs ``mean`` and ``var_temporal ⊗ var_spatial``."""

    mean: np.ndarray
    var_temporal: np.ndarray
    var_spatial: np.ndarray
    stage: str
    info: dict = field(default_factory=dict, compare=False)

    @property
    def n(self):
        return self.var_temporal.shape[0]

    @property
    def p(self):
        return self.var_spatial.shape[0]

    @property
    def cov(self):
        return KroneckerOp(self.var_temporal, self.var_spatial)

    def marginal_var(self):
        return np.kron(np.diag(self.var_temporal), np.diag(self.var_spatial))

    def mean_fields(self):
        return self.mean.reshape(self.n, self.p)


@dataclass(frozen=True)
class ObservationSet:
    """Point observations of time-averaged, spatially interpolated values.

    Each row of ``time_weights`` (length ``n``) and ``spatial_weights``
    (length ``p``) is nonnegative and sums to one.  Measurement error has
    mean ``bias_mean`` and covariance ``V_D (I + V_B) V_D`` where ``V_D`` is
    ``diag(sd)`` and ``V_B`` links distinct observations sharing a
    ``bias_block`` label.
    """

    values: np.ndarray
    time_weights: np.ndarray
    spatial_weights: np.ndarray
    bias_mean: np.ndarray
    sd: np.ndarray
    bias_block: tuple = ()
    lats: np.ndarray = None
    lons: np.ndarray = None

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.values, dtype=float))
        d = z.size
        A = np.asarray(self.time_weights, dtype=float)
        S = np.asarray(self.spatial_weights, dtype=float)
        A = A.reshape(d, A.shape[-1] if A.ndim == 2 else -1)
        S = S.reshape(d, S.shape[-1] if S.ndim == 2 else -1)
        bias = np.broadcast_to(np.asarray(self.bias_mean, dtype=float), (d,)).copy()
        sd = np.broadcast_to(np.asarray(self.sd, dtype=float), (d,)).copy()
        blocks = tuple(self.bias_block) if self.bias_block else (None,) * d
        if len(blocks) != d:
            raise InvalidInputError("one bias_block entry per observation required")
        for name, arr in (("values", z), ("time_weights", A), ("spatial_weights", S), ("bias_mean", bias), ("sd", sd)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"observation {name} contains non-finite values")
        if d:
            for name, W in (("time", A), ("spatial", S)):
                if np.any(W < 0) or np.any(np.abs(W.sum(axis=1) - 1.0) > 1e-12):
                    raise InvalidInputError(f"{name} weights must be nonnegative and sum to one")
        lats = None if self.lats is None else np.asarray(self.lats, dtype=float).reshape(d)
        lons = None if self.lons is None else np.asarray(self.lons, dtype=float).reshape(d)
        for name, value in (("values", z), ("time_weights", A), ("spatial_weights", S),
                            ("bias_mean", bias), ("sd", sd), ("bias_block", blocks),
                            ("lats", lats), ("lons", lons)):
            object.__setattr__(self, name, value)

    @property
    def d(self):
        return self.values.size

    def apply(self, field_values):
        """``H x`` for a flattened ``(n*p)`` field."""
        n = self.time_weights.shape[1]
        X = np.asarray(field_values, dtype=float).reshape(n, -1)
        return np.einsum("it,tp,ip->i", self.time_weights, X, self.spatial_weights)

    def incidence_matrix(self):
        """Dense ``H`` (rows ``a_i ⊗ s_i``); small problems only."""
        return np.stack([np.kron(a, s) for a, s in zip(self.time_weights, self.spatial_weights)]) \
            if self.d else np.zeros((0, self.time_weights.shape[1] * self.spatial_weights.shape[1]))

    def concat(self, other):
        def cat(a, b):
            if a is None or b is None:
                return None
            return np.concatenate([a, b])

        return ObservationSet(
            values=np.concatenate([self.values, other.values]),
            time_weights=np.vstack([self.time_weights, other.time_weights]),
            spatial_weights=np.vstack([self.spatial_weights, other.spatial_weights]),
            bias_mean=np.concatenate([self.bias_mean, other.bias_mean]),
            sd=np.concatenate([self.sd, other.sd]),
            bias_block=self.bias_block + other.bias_block,
            lats=cat(self.lats, other.lats),
            lons=cat(self.lons, other.lons),
        )


def empty_observations(n, p):
    return ObservationSet(np.zeros(0), np.zeros((0, n)), np.zeros((0, p)), np.zeros(0), np.zeros(0), (),
                          np.zeros(0), np.zeros(0))


def make_observations(lats, lons, values, sds, grid, month_labels, seasons="annual",
                      custom_weights=None, bias_mean=0.0, bias_block=None, neighbours=4):
    """Assemble an :class:`ObservationSet` from point records on ``grid``."""
    lats = np.atleast_1d(np.asarray(lats, dtype=float))
    lons = np.atleast_1d(np.asarray(lons, dtype=float))
    d = lats.size
    if isinstance(seasons, str):
        seasons = [seasons] * d
    if custom_weights is None:
        custom_weights = [None] * d
    A = np.array([season_weights(tag, month_labels, lat, cw)
                  for tag, lat, cw in zip(seasons, lats, custom_weights)]).reshape(d, len(month_labels))
    S = np.array([grid.interp_weights(la, lo, neighbours) for la, lo in zip(lats, lons)]).reshape(d, grid.p)
    blocks = tuple(bias_block) if bias_block is not None else (None,) * d
    return ObservationSet(values, A, S, bias_mean, sds, blocks, lats, lons)


def nordic_blocks(lats, lons, lat_min=62.0, lon_window=(-180.0, 180.0), label="nordic"):
    """Bias-block labels for observations north of ``lat_min`` inside a longitude window."""
    lats = np.atleast_1d(lats)
    lons = np.atleast_1d(lons)
    lo, hi = lon_window
    inside = (lats > lat_min) & (lons >= lo) & (lons <= hi)
    return tuple(label if flag else None for flag in inside)


def ensemble_mean(e):
    return e.members.mean(axis=0)


def _spatial_sum_deviations(e):
    dev = e.members - e.members.mean(axis=0)
    return dev.reshape(e.m, e.n, e.p).sum(axis=1)


def empirical_cov(e):
    """Dense sample covariance of the members (small ensembles/tests only)."""
    return np.cov(e.members, rowvar=False, ddof=1)


def estimate_var_MX(e, alpha2=1.0, temporal="ones"):
    """Separable ``var[M(X)] = var_T ⊗ var_S`` fitted to the member spread.

    With ``temporal="ones"`` the temporal factor is fixed at the all-ones
    matrix ``J`` and the spatial factor is the Frobenius minimiser of
    ``||S_X - J ⊗ V||``, i.e. the average of the ``n^2`` spatial blocks of the
    sample covariance ``S_X``. It is computed from the members directly, so
    ``S_X`` is never formed. ``temporal="free"`` fits both factors with
    :func:`~coexproc.linalg.nearest_kron_psd` on the dense ``S_X``.

    Returns the factors of ``var[M(X)]`` (``var[X] / (1 + alpha2)``).
    """
    if e.m < 2:
        raise DegenerateEnsembleError("need at least two members to estimate a covariance")
    if not alpha2 > 0:
        raise InvalidInputError("alpha2 must be positive")
    n = e.n
    if temporal == "ones":
        sums = _spatial_sum_deviations(e)
        VS = sums.T @ sums / (n * n * (e.m - 1))
        VS = psd_project(VS)
        VT = np.ones((n, n))
    elif temporal == "free":
        from .linalg import nearest_kron_psd

        VT, VS = nearest_kron_psd(empirical_cov(e), n, e.p)
    else:
        raise InvalidInputError(f"unknown temporal mode {temporal!r}")
    if not np.any(VS) or np.trace(VS) <= 0.0:
        raise DegenerateEnsembleError("ensemble spread is zero; var[M(X)] is degenerate")
    return VT, VS / (1.0 + alpha2)


def fit_field_spec(e, alpha2=1.0, wendland=None, dist_scale=1.0, discrepancy_mean=None, temporal="ones"):
    """:class:`CoexFieldSpec` whose ``var[X]`` factors are fitted to ``e``."""
    VT, VMS = estimate_var_MX(e, alpha2, temporal)
    return CoexFieldSpec(
        alpha2=alpha2,
        var_XT=VT,
        var_XS=VMS * (1.0 + alpha2),
        discrepancy_wendland=wendland or WendlandParams(),
        discrepancy_mean=discrepancy_mean,
        dist_scale=dist_scale,
    )


def first_stage_prefactor(alpha2, m):
    """Weight ``alpha2 / (m + alpha2)`` on ``var[M(X)]`` after adjusting by ``Xbar``."""
    return alpha2 / (m + alpha2)


def first_update_field(e, spec, prior_mean_M=None):
    """Adjust reality ``X*`` by the ensemble mean.

    The adjusted variance is ``a^2 alpha2/(m + alpha2) var[M] + var[U]`` with
    both terms sharing ``var_XT``.  The adjusted mean defaults to the
    approximation ``a Xbar + E[U]``; pass ``prior_mean_M`` to get the exact
    ``a (E[M] + m/(m + alpha2) (Xbar - E[M])) + E[U]`` instead.
    """
    n, p = spec.var_XT.shape[0], spec.var_XS.shape[0]
    if (n, p) != (e.n, e.p):
        raise InvalidInputError(f"spec is for n={n}, p={p}; ensemble has n={e.n}, p={e.p}")
    a = spec.incidence
    xbar = ensemble_mean(e)
    if prior_mean_M is None:
        mean = a * xbar
    else:
        mu = np.asarray(prior_mean_M, dtype=float).reshape(-1)
        if mu.size != n * p:
            raise InvalidInputError("prior mean of M(X) must have length n*p")
        mean = a * (mu + e.m / (e.m + spec.alpha2) * (xbar - mu))
    if spec.discrepancy_mean is not None:
        mean = mean + spec.discrepancy_mean
    VU = spec.discrepancy_spatial(e.grid)
    VS = a * a * first_stage_prefactor(spec.alpha2, e.m) * spec.var_MS + VU
    return FieldReconstruction(mean, spec.var_XT.copy(), symmetrize(VS), ENSEMBLE_ADJUSTED)


@dataclass(frozen=True)
class PseudoObsConfig:
    count: int = 10
    latitudes: tuple = (80.0, -80.0)
    value: float = -1.92
    sd: float = 0.25
    season: str = "annual"


def add_pseudo_observations(obs, grid, month_labels, config=None):
    """Append equally spaced (in longitude) pseudo-observations at each latitude."""
    config = config or PseudoObsConfig()
    if config.count <= 0 or not config.latitudes:
        return obs
    lons = -180.0 + 360.0 * np.arange(config.count) / config.count
    lats = np.repeat(np.asarray(config.latitudes, dtype=float), config.count)
    lons = np.tile(lons, len(config.latitudes))
    extra = make_observations(lats, lons, np.full(lats.size, config.value), np.full(lats.size, config.sd),
                              grid, month_labels, seasons=config.season)
    return obs.concat(extra)


def build_error_model(obs):
    """Measurement-error mean and covariance ``V_D (I + V_B) V_D``."""
    sd = obs.sd
    if np.any(sd <= 0):
        raise InvalidInputError("observation standard deviations must be positive")
    d = obs.d
    link = np.eye(d)
    blocks = np.array([b if b is not None else "" for b in obs.bias_block], dtype=object)
    for label in set(b for b in obs.bias_block if b is not None):
        idx = np.flatnonzero(blocks == label)
        link[np.ix_(idx, idx)] = 1.0
    return obs.bias_mean.copy(), sd[:, None] * link * sd[None, :]


def _constant_temporal(VT, tol=1e-12):
    c = VT[0, 0]
    if c < 0 or not np.allclose(VT, c, rtol=0.0, atol=tol * max(1.0, abs(c))):
        return None
    return float(c)


def second_update_field(rec, obs, cond_warn=COND_WARN, rel_tol=None):
    """Adjust ensemble-adjusted beliefs by observations.

    Requires the temporal factor to be a constant matrix ``c J`` (``J`` all
    ones): with time weights summing to one, ``var_T a_i = c 1``
    for every observation, and the adjusted variance stays separable as
    ``var_T ⊗ (V_S - c V_S S' var[Z]^+ S V_S)``.
    """
    if rec.stage != ENSEMBLE_ADJUSTED:
        raise InvalidInputError("second update expects an ensemble-adjusted reconstruction")
    n, p = rec.n, rec.p
    if obs.d == 0:
        return replace(rec, stage=DATA_ADJUSTED, info={"n_obs": 0, "cond_var_Z": 0.0})
    if obs.time_weights.shape[1] != n or obs.spatial_weights.shape[1] != p:
        raise InvalidInputError("observation weights do not match reconstruction dimensions")
    c = _constant_temporal(rec.var_temporal)
    if c is None:
        raise InvalidInputError("separable data update needs a constant temporal factor (c * J)")
    K = rec.cov
    bias, VW = build_error_model(obs)
    var_Z = kron_quadform(K, obs.time_weights, obs.spatial_weights) + VW
    cond = float(np.linalg.cond(var_Z))
    if not np.isfinite(cond) or cond > cond_warn:
        warnings.warn(f"var[Z] condition number {cond:.3e} exceeds {cond_warn:.1e}", ConditioningWarning,
                      stacklevel=2)
    var_Z_inv = pinv(var_Z, rel_tol)
    resid = obs.values - obs.apply(rec.mean) - bias
    w = var_Z_inv @ resid
    SV = obs.spatial_weights @ rec.var_spatial
    delta = (rec.var_temporal @ obs.time_weights.T) @ (w[:, None] * SV)
    mean = rec.mean + delta.reshape(-1)
    VS = rec.var_spatial - c * (SV.T @ var_Z_inv @ SV)
    VS, lo = psd_project(VS, tol=1e-10, return_min=True)
    info = {"n_obs": obs.d, "cond_var_Z": cond, "min_eig_pre_projection": lo}
    return FieldReconstruction(mean, rec.var_temporal.copy(), VS, DATA_ADJUSTED, info)
