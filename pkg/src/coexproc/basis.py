"""Bases for the dependent field: I-splines in temperature, PCA spatial
coefficient bases, heteroskedastic residual variance and the C4-Wendland
covariance on the sphere.

Spline coefficient layout: ``l`` coefficients at each of ``p`` locations are
stacked coefficient-major, entry ``a * p + s`` being coefficient ``a`` at
location ``s``.  With this layout a per-coefficient spatial covariance ``V``
gives ``I_l ⊗ V`` for the whole coefficient vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline
from scipy.optimize import nnls

from .errors import DegenerateEnsembleError, InvalidInputError
from .linalg import distance_matrix, geodesic_dist, pinv


@dataclass(frozen=True)
class ISplineBasis:
    """Monotone I-spline family (integrated, normalised M-splines).

    ``order`` is the order of the underlying M-splines, so ``order=3`` uses
    quadratic M-splines and gives cubic, nondecreasing I-splines rising
    from 0 at ``boundary[0]`` to 1 at ``boundary[1]``.
    """

    order: int = 3
    interior_knots: tuple = (-1.0, 1.0, 3.0)
    boundary: tuple = (-2.0, 30.0)
    include_intercept: bool = True

    def __post_init__(self):
        knots = tuple(float(k) for k in self.interior_knots)
        lo, hi = (float(b) for b in self.boundary)
        if int(self.order) < 2:
            raise InvalidInputError("spline order must be >= 2")
        if not lo < hi:
            raise InvalidInputError("boundary must satisfy t_min < t_max")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise InvalidInputError("interior knots must be strictly increasing")
        if knots and (knots[0] <= lo or knots[-1] >= hi):
            raise InvalidInputError("interior knots must lie strictly inside the boundary")
        object.__setattr__(self, "order", int(self.order))
        object.__setattr__(self, "interior_knots", knots)
        object.__setattr__(self, "boundary", (lo, hi))
        object.__setattr__(self, "include_intercept", bool(self.include_intercept))

    @property
    def n_splines(self):
        return len(self.interior_knots) + self.order

    @property
    def n_functions(self):
        return self.n_splines + int(self.include_intercept)

    @property
    def knot_vector(self):
        lo, hi = self.boundary
        k = self.order
        return np.r_[[lo] * k, self.interior_knots, [hi] * k]

    @cached_property
    def _integrated(self):
        t = self.knot_vector
        k = self.order
        nb = self.n_splines
        spline = BSpline(t, np.eye(nb), k - 1, extrapolate=False)
        # M_i = k / (t_{i+k} - t_i) B_i integrates to one
        scale = k / (t[k:k + nb] - t[:nb])
        return spline.antiderivative(), scale

    def __call__(self, t):
        return ispline_eval(self, t)


def ispline_eval(b, t):
    """I-spline values at temperature(s) ``t``.

    Returns an array of shape ``t.shape + (l,)``; the intercept column (if
    any) comes first. Inputs are clamped to the boundary interval.
    """
    t = np.asarray(t, dtype=float)
    lo, hi = b.boundary
    flat = np.clip(t.reshape(-1), lo, hi)
    anti, scale = b._integrated
    vals = (anti(flat) - anti(np.array([lo]))) * scale
    vals = np.nan_to_num(vals, nan=0.0)
    vals = np.clip(vals, 0.0, 1.0)
    # exact 0 / 1 outside each spline's support removes roundoff jitter
    knots, k = b.knot_vector, b.order
    nb = b.n_splines
    vals[flat[:, None] <= knots[None, :nb]] = 0.0
    vals[flat[:, None] >= knots[None, k:k + nb]] = 1.0
    if b.include_intercept:
        vals = np.hstack([np.ones((flat.size, 1)), vals])
    return vals.reshape(t.shape + (b.n_functions,))


def build_design(b, field_values):
    """Per-location design block, row ``s`` being the basis at location ``s``."""
    x = np.asarray(field_values, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError("build_design takes one spatial field (length p)")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("temperatures must be finite")
    return ispline_eval(b, x)


def build_designs(b, fields):
    """Designs for ``n`` monthly fields, shape ``(n, p, l)``."""
    fields = np.asarray(fields, dtype=float)
    return np.stack([build_design(b, row) for row in fields])


def fit_theta_hat(Y, designs, rel_tol=1e-3, monotone=None, n_free=1):
    """Per-location least squares of the ``n`` monthly responses on the design.

    ``Y`` has shape ``(n, p)`` and ``designs`` ``(n, p, l)``.  Returns the
    stacked coefficient vector of length ``l * p`` (coefficient-major).

    Unconstrained fits use a truncated-SVD pseudo-inverse dropping singular
    values below ``rel_tol * s_max``: a year of temperatures at one place
    covers a narrow range, so several splines are nearly collinear there and
    an untruncated solve returns huge, cancelling coefficients.

    ``monotone="increasing"`` (``"decreasing"``) constrains every coefficient
    after the first ``n_free`` (the intercept) to be nonnegative
    (nonpositive), so each fitted curve is monotone; solved with NNLS plus
    a ridge of size ``rel_tol * s_max`` that keeps the solution unique.
    """
    Y = np.asarray(Y, dtype=float)
    G = np.asarray(designs, dtype=float)
    if Y.ndim != 2 or Y.shape[0] < 1:
        raise InvalidInputError("need at least one month of responses")
    n, p = Y.shape
    if G.shape[:2] != (n, p):
        raise InvalidInputError(f"design shape {G.shape} does not match responses {Y.shape}")
    if monotone not in (None, "increasing", "decreasing"):
        raise InvalidInputError(f"monotone must be None, 'increasing' or 'decreasing', got {monotone!r}")
    ell = G.shape[2]
    theta = np.empty((ell, p))
    sign = -1.0 if monotone == "decreasing" else 1.0
    for s in range(p):
        A = G[:, s, :]
        if monotone is None:
            theta[:, s] = pinv(A, rel_tol) @ Y[:, s]
            continue
        # free columns split as (+col, -col); constrained columns carry the sign
        free, rest = A[:, :n_free], sign * A[:, n_free:]
        Z = np.hstack([free, -free, rest])
        # ridge rows pick a bounded solution among collinear splines
        ridge = rel_tol * np.linalg.norm(A, 2)
        Z = np.vstack([Z, ridge * np.eye(Z.shape[1])])
        coef, _ = nnls(Z, np.r_[Y[:, s], np.zeros(Z.shape[1])])
        theta[:n_free, s] = coef[:n_free] - coef[n_free:2 * n_free]
        theta[n_free:, s] = sign * coef[2 * n_free:]
    return theta.reshape(-1)


def fitted_values(theta, designs):
    """Responses implied by stacked coefficients, shape ``(n, p)``."""
    G = np.asarray(designs, dtype=float)
    ell, p = G.shape[2], G.shape[1]
    coef = np.asarray(theta, dtype=float).reshape(ell, p)
    return np.einsum("tsa,as->ts", G, coef)


@dataclass(frozen=True)
class SpatialBasis:
    """Principal-component basis for the stacked spline coefficients.

    ``columns`` is ``(l*p, k)`` with orthonormal columns, ``eigenvalues``
    the matching (nonincreasing) component variances, and ``center`` the
    ensemble-mean coefficient vector the components are measured from.
    """

    columns: np.ndarray
    eigenvalues: np.ndarray
    center: np.ndarray = field(default=None)

    def __post_init__(self):
        cols = np.atleast_2d(np.asarray(self.columns, dtype=float))
        lam = np.atleast_1d(np.asarray(self.eigenvalues, dtype=float))
        if cols.shape[1] != lam.size:
            raise InvalidInputError("one eigenvalue per column required")
        center = np.zeros(cols.shape[0]) if self.center is None else np.asarray(self.center, dtype=float)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "center", center)

    @property
    def k(self):
        return self.columns.shape[1]


def pca_spatial_basis(theta_hats, energy=0.95, rel_tol=1e-12):
    """Principal components of the member coefficient vectors.

    Keeps the smallest number of components whose cumulative variance
    fraction reaches ``energy``. Eigenvalues are sample variances (divisor
    ``m - 1``).
    """
    T = np.asarray(theta_hats, dtype=float)
    if T.ndim != 2 or T.shape[0] < 2:
        raise InvalidInputError("PCA needs at least two member coefficient vectors")
    if not 0.0 < energy <= 1.0:
        raise InvalidInputError("energy must lie in (0, 1]")
    m = T.shape[0]
    center = T.mean(axis=0)
    C = T - center
    _, s, Vt = np.linalg.svd(C, full_matrices=False)
    # roundoff in the mean leaves ~eps spread even for identical members
    if s.size == 0 or s[0] <= 1e-12 * np.abs(T).max() * np.sqrt(T.size):
        raise DegenerateEnsembleError("all members identical: no spread for a principal-component basis")
    s = s[s > rel_tol * s[0] * max(C.shape)]
    lam = s**2 / (m - 1)
    frac = np.cumsum(lam) / lam.sum()
    k = int(np.searchsorted(frac, energy * (1.0 - 1e-12)) + 1)
    k = min(k, lam.size)
    return SpatialBasis(Vt[:k].T.copy(), lam[:k].copy(), center)


def hetero_residual_var(t, sigma2_min=1e-4, sigma2_max=0.04, center=1.0, width=2.0):
    """Residual variance as a Gaussian bump in temperature.

    Largest (``sigma2_max``) at ``center`` and falling to ``sigma2_min`` for
    very cold or warm temperatures.
    """
    if not sigma2_max >= sigma2_min > 0:
        raise InvalidInputError("need sigma2_max >= sigma2_min > 0")
    t = np.asarray(t, dtype=float)
    return sigma2_min + (sigma2_max - sigma2_min) * np.exp(-((t - center) ** 2) / (2.0 * width**2))


@dataclass(frozen=True)
class WendlandParams:
    kappa2: float = 1.61
    c: float = 0.92
    tau: float = 6.0

    def __post_init__(self):
        if not self.kappa2 > 0:
            raise InvalidInputError("kappa2 must be positive")
        if not self.c > 0:
            raise InvalidInputError("support range c must be positive")
        if not self.tau >= 6:
            raise InvalidInputError("tau must be >= 6")


def wendland(d, w):
    """C4-Wendland covariance at (already scaled) distance ``d``."""
    r = np.asarray(d, dtype=float) / w.c
    tau = w.tau
    taper = np.clip(1.0 - r, 0.0, None) ** tau
    return w.kappa2 * (1.0 + tau * r + (tau**2 - 1.0) / 3.0 * r**2) * taper


def wendland_cov(lat1, lon1, lat2, lon2, w, dist_scale=1.0):
    if not dist_scale > 0:
        raise InvalidInputError("dist_scale must be positive")
    return wendland(geodesic_dist(lat1, lon1, lat2, lon2) * dist_scale, w)


def wendland_gram(lats, lons, w, dist_scale=1.0, lats_b=None, lons_b=None):
    """Wendland covariance matrix over a set of locations (or two sets)."""
    if not dist_scale > 0:
        raise InvalidInputError("dist_scale must be positive")
    D = distance_matrix(lats, lons, lats_b, lons_b) * dist_scale
    K = wendland(D, w)
    if lats_b is None:
        K = 0.5 * (K + K.T)
    return K
