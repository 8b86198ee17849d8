"""Bayes linear adjustment of second-order belief structures.

A belief structure is an expectation vector and a variance matrix. Adjusting
a collection ``X`` by data ``D`` projects ``X`` onto ``span[1, D]``:

    E_D[X]   = E[X] + cov[X, D] var[D]^+ (d - E[D])
    var_D[X] = var[X] - cov[X, D] var[D]^+ cov[D, X]

with ``^+`` the Moore-Penrose inverse.  The exchangeable helpers build the
``Psi + 1{i=j} Gamma`` covariance of second-order exchangeable members and
exploit the sufficiency of the sample mean for the common mean term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidBeliefsError, InvalidInputError
from .linalg import is_psd, pinv, psd_project, symmetrize

PSD_TOL = 1e-10


@dataclass(frozen=True)
class BeliefStructure:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise InvalidInputError(f"cov shape {cov.shape} does not match mean length {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def sd(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


@dataclass(frozen=True)
class JointBeliefs:
    """Second-order specification over a target ``X`` and data ``D``."""

    mean_x: np.ndarray
    mean_d: np.ndarray
    cov_xx: np.ndarray
    cov_xd: np.ndarray
    cov_dd: np.ndarray

    def __post_init__(self):
        mx = np.atleast_1d(np.asarray(self.mean_x, dtype=float))
        md = np.atleast_1d(np.asarray(self.mean_d, dtype=float))
        cxx = np.atleast_2d(np.asarray(self.cov_xx, dtype=float))
        cxd = np.asarray(self.cov_xd, dtype=float).reshape(mx.size, md.size)
        cdd = np.atleast_2d(np.asarray(self.cov_dd, dtype=float))
        if cxx.shape != (mx.size, mx.size) or cdd.shape != (md.size, md.size):
            raise InvalidInputError("covariance blocks do not match mean lengths")
        for name, value in (("mean_x", mx), ("mean_d", md), ("cov_xx", cxx), ("cov_xd", cxd), ("cov_dd", cdd)):
            if not np.all(np.isfinite(value)):
                raise InvalidInputError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, value)

    def stacked_cov(self):
        return np.block([[self.cov_xx, self.cov_xd], [self.cov_xd.T, self.cov_dd]])

    def check(self, tol=PSD_TOL):
        if not is_psd(self.stacked_cov(), tol=tol):
            raise InvalidBeliefsError("joint covariance of (X, D) is not positive semi-definite")


@dataclass(frozen=True)
class AdjustmentResult:
    adj_mean: np.ndarray
    adj_cov: np.ndarray
    resolved_variance_fraction: np.ndarray

    @property
    def beliefs(self):
        return BeliefStructure(self.adj_mean, self.adj_cov)


def resolution(prior_cov, adj_cov):
    """Componentwise resolved fraction ``1 - var_D[X]_kk / var[X]_kk`` (0/0 -> 0)."""
    prior = np.diag(np.atleast_2d(prior_cov))
    post = np.diag(np.atleast_2d(adj_cov))
    out = np.zeros_like(prior)
    nz = prior > 0
    out[nz] = 1.0 - post[nz] / prior[nz]
    return out


def _gain(jb, rel_tol=None):
    return jb.cov_xd @ pinv(symmetrize(jb.cov_dd), rel_tol)


def adjust_expectation(jb, d_obs, rel_tol=None):
    d_obs = np.atleast_1d(np.asarray(d_obs, dtype=float))
    if d_obs.shape != jb.mean_d.shape:
        raise InvalidInputError(f"data length {d_obs.size} != {jb.mean_d.size}")
    return jb.mean_x + _gain(jb, rel_tol) @ (d_obs - jb.mean_d)


def adjust_variance(jb, rel_tol=None, check=True):
    """Adjusted variance, symmetrised and projected onto the PSD cone."""
    if check:
        jb.check()
    adj = jb.cov_xx - _gain(jb, rel_tol) @ jb.cov_xd.T
    return psd_project(adj, tol=PSD_TOL)


def adjust(jb, d_obs, rel_tol=None, check=True):
    """Adjusted expectation and variance of ``X`` given observed ``d_obs``."""
    d_obs = np.atleast_1d(np.asarray(d_obs, dtype=float))
    if d_obs.shape != jb.mean_d.shape:
        raise InvalidInputError(f"data length {d_obs.size} != {jb.mean_d.size}")
    if check:
        jb.check()
    G = _gain(jb, rel_tol)
    mean = jb.mean_x + G @ (d_obs - jb.mean_d)
    cov = psd_project(jb.cov_xx - G @ jb.cov_xd.T, tol=PSD_TOL)
    return AdjustmentResult(mean, cov, resolution(jb.cov_xx, cov))


@dataclass(frozen=True)
class ExchangeableSpec:
    """Second-order exchangeable members ``X_i = M(X) + R_i(X)``.

    ``cov_M`` is ``var[M(X)]`` (the common ``Psi``) and ``cov_R`` is
    ``var[R_i(X)]`` (the ``Gamma`` on the diagonal blocks).
    """

    m: int
    mean_M: np.ndarray
    cov_M: np.ndarray
    cov_R: np.ndarray

    def __post_init__(self):
        if int(self.m) < 1:
            raise InvalidInputError("exchangeable spec needs at least one member")
        mean = np.atleast_1d(np.asarray(self.mean_M, dtype=float))
        cM = np.atleast_2d(np.asarray(self.cov_M, dtype=float))
        cR = np.atleast_2d(np.asarray(self.cov_R, dtype=float))
        if cM.shape != (mean.size, mean.size) or cR.shape != cM.shape:
            raise InvalidInputError("exchangeable spec dimensions disagree")
        if not (is_psd(cM) and is_psd(cR)):
            raise InvalidBeliefsError("cov_M and cov_R must be PSD")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "mean_M", mean)
        object.__setattr__(self, "cov_M", cM)
        object.__setattr__(self, "cov_R", cR)

    @property
    def dim(self):
        return self.mean_M.size


def build_exchangeable_cov(spec, i, j):
    """``cov[X_i, X_j]`` for 1-based member indices."""
    for idx in (i, j):
        if not 1 <= idx <= spec.m:
            raise InvalidInputError(f"member index {idx} outside 1..{spec.m}")
    if i == j:
        return spec.cov_M + spec.cov_R
    return spec.cov_M.copy()


def exchangeable_member_cov(spec):
    """Full ``(m*dim)`` square covariance of the stacked members."""
    m = spec.m
    return np.kron(np.ones((m, m)), spec.cov_M) + np.kron(np.eye(m), spec.cov_R)


def _members_matrix(spec, members):
    X = np.asarray(members, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise InvalidInputError("empty ensemble")
    if X.shape[0] != spec.m or X.shape[1] != spec.dim:
        raise InvalidInputError(f"members shape {X.shape} != ({spec.m}, {spec.dim})")
    return X


def sample_mean_adjust(spec, members):
    """Adjust ``M(X)`` by the ensemble mean alone.

    Uses ``cov[M, Xbar] = cov_M`` and ``var[Xbar] = cov_M + cov_R / m``.
    """
    X = _members_matrix(spec, members)
    xbar = X.mean(axis=0)
    jb = JointBeliefs(
        mean_x=spec.mean_M,
        mean_d=spec.mean_M,
        cov_xx=spec.cov_M,
        cov_xd=spec.cov_M,
        cov_dd=spec.cov_M + spec.cov_R / spec.m,
    )
    return adjust(jb, xbar)


def stacked_members_adjust(spec, members):
    """Adjust ``M(X)`` by every member at once (the full-data route)."""
    X = _members_matrix(spec, members)
    m = spec.m
    jb = JointBeliefs(
        mean_x=spec.mean_M,
        mean_d=np.tile(spec.mean_M, m),
        cov_xx=spec.cov_M,
        cov_xd=np.tile(spec.cov_M, (1, m)),
        cov_dd=exchangeable_member_cov(spec),
    )
    return adjust(jb, X.reshape(-1))
