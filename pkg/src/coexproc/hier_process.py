"""Bayes linear hierarchical model for exchangeable groups of regressions.

Each group ``i`` observes ``Y_i = Phi_i beta_i + R_i(Y)`` and the group
coefficients are themselves exchangeable, ``beta_i = M(beta) + R_i(beta)``.
The collection ``B = (beta_1, ..., beta_m, M(beta))`` is adjusted either

* through the per-group projections ``beta_hat_i = (Phi_i' Phi_i)^+ Phi_i' Y_i``
  (:func:`adjust_hierarchy`, a ``k m`` square solve), or
* through the full responses stacked with the zero pseudo-responses of the
  Hodges reparametrisation (:func:`adjust_hierarchy_dense`, the oracle path).

The projections are Bayes linear sufficient when, for every group, the
projection residual ``(I - P_i) R_i(Y)`` is uncorrelated with ``beta_hat``;
:func:`check_projection_invariance` reports both the shared-column-space
discrepancy and that residual leakage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bayes_linear import JointBeliefs, adjust
from .errors import InvalidBeliefsError, InvalidInputError
from .linalg import is_psd, pinv, symmetrize


@dataclass(frozen=True)
class GroupData:
    """Design ``Phi`` (``q x k``), response ``Y`` and residual variance.

    ``resid_var`` is either a length-``q`` vector (diagonal, heteroskedastic)
    or a full ``q x q`` matrix.
    """

    Phi: np.ndarray
    Y: np.ndarray
    resid_var: np.ndarray

    def __post_init__(self):
        Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        R = np.asarray(self.resid_var, dtype=float)
        if Y.size != Phi.shape[0]:
            raise InvalidInputError("response length does not match design rows")
        if R.ndim == 0:
            R = np.full(Y.size, float(R))
        if R.shape not in ((Y.size,), (Y.size, Y.size)):
            raise InvalidInputError("residual variance must be length q or q x q")
        if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(Y)) and np.all(np.isfinite(R))):
            raise InvalidInputError("group data must be finite")
        if R.ndim == 1 and np.any(R <= 0):
            raise InvalidInputError("residual variances must be positive")
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "resid_var", R)

    @property
    def k(self):
        return self.Phi.shape[1]

    def resid_cov(self):
        R = self.resid_var
        return np.diag(R) if R.ndim == 1 else R


@dataclass(frozen=True)
class HierPrior:
    mean_Mbeta: np.ndarray
    var_Mbeta: np.ndarray
    var_Rbeta: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean_Mbeta, dtype=float))
        VM = np.atleast_2d(np.asarray(self.var_Mbeta, dtype=float))
        VR = np.atleast_2d(np.asarray(self.var_Rbeta, dtype=float))
        k = mu.size
        if VM.shape != (k, k) or VR.shape != (k, k):
            raise InvalidInputError("prior dimensions disagree")
        if not (is_psd(VM) and is_psd(VR)):
            raise InvalidBeliefsError("prior variances must be PSD")
        object.__setattr__(self, "mean_Mbeta", mu)
        object.__setattr__(self, "var_Mbeta", symmetrize(VM))
        object.__setattr__(self, "var_Rbeta", symmetrize(VR))

    @property
    def k(self):
        return self.mean_Mbeta.size

    @classmethod
    def from_eigenvalues(cls, lam, alpha2=1.0, mean=None):
        """Split ``var[beta_i] = diag(lam)`` into ``var[M] + var[R]`` with ``var[R] = alpha2 var[M]``."""
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        mean = np.zeros(lam.size) if mean is None else mean
        VM = np.diag(lam / (1.0 + alpha2))
        return cls(mean, VM, alpha2 * VM)


@dataclass(frozen=True)
class BetaHatSet:
    beta_hats: np.ndarray
    projection_residual_norms: np.ndarray

    @property
    def m(self):
        return self.beta_hats.shape[0]

    @property
    def k(self):
        return self.beta_hats.shape[1]


@dataclass(frozen=True)
class AdjustedHierarchy:
    """Adjusted ``B = (beta_1, ..., beta_m, M(beta))``."""

    adj_mean_B: np.ndarray
    adj_var_B: np.ndarray
    k: int

    @property
    def m(self):
        return self.adj_mean_B.size // self.k - 1

    def group(self, i):
        sl = slice(i * self.k, (i + 1) * self.k)
        return self.adj_mean_B[sl], self.adj_var_B[sl, sl]


def hat_matrix(Phi):
    """``(Phi' Phi)^+ Phi'``, the map from responses to projected coefficients."""
    Phi = np.asarray(Phi, dtype=float)
    return pinv(Phi.T @ Phi) @ Phi.T


def project_beta_hat(g):
    """Least-squares projection of one group's response onto its design."""
    if not np.any(g.Phi):
        raise InvalidInputError("design is identically zero")
    beta = hat_matrix(g.Phi) @ g.Y
    return beta, float(np.linalg.norm(g.Y - g.Phi @ beta))


def project_all(groups):
    pairs = [project_beta_hat(g) for g in groups]
    return BetaHatSet(np.array([b for b, _ in pairs]), np.array([r for _, r in pairs]))


def projected_resid_var(g):
    """``var[R_i(beta_hat)] = L var[R_i(Y)] L'`` with ``L = (Phi' Phi)^+ Phi'``."""
    L = hat_matrix(g.Phi)
    R = g.resid_var
    if R.ndim == 1:
        return symmetrize((L * R) @ L.T)
    return symmetrize(L @ R @ L.T)


def projector(Phi):
    Phi = np.asarray(Phi, dtype=float)
    return Phi @ hat_matrix(Phi)


@dataclass(frozen=True)
class InvarianceReport:
    max_projection_discrepancy: float
    projection_discrepancies: np.ndarray
    residual_leakage: np.ndarray
    tol: float

    @property
    def passed(self):
        """Shared column space across groups, to ``tol``."""
        return bool(self.max_projection_discrepancy <= self.tol)

    @property
    def residuals_compatible(self):
        """No group leaks residual covariance across its projection."""
        return bool(np.all(self.residual_leakage <= self.tol))


def column_basis(Phi, rel_tol=1e-12):
    """Orthonormal basis ``Q`` of ``C(Phi)``, so that ``P = Q Q'``."""
    U, s, _ = np.linalg.svd(np.asarray(Phi, dtype=float), full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return U[:, :0]
    return U[:, s > rel_tol * s[0] * max(Phi.shape)]


def check_projection_invariance(groups, tol=1e-10):
    """Compare column spaces of the group designs.

    Reports ``||P_i - P_1||_F`` per group, and per group the relative leakage
    ``||(I - P_i) var[R_i(Y)] P_i||_F / ||var[R_i(Y)]||_F`` which must vanish
    for the projected coefficients to carry all of a group's information.
    Both are computed from orthonormal column bases, never forming ``P_i``.
    """
    if len(groups) < 1:
        raise InvalidInputError("need at least one group")
    Q = [column_basis(g.Phi) for g in groups]
    Q1 = Q[0]
    disc = []
    for Qi in Q:
        if Qi.shape[0] != Q1.shape[0]:
            disc.append(np.inf)
            continue
        # ||P_i - P_1||^2 = ||(I - P_1) Q_i||^2 + ||(I - P_i) Q_1||^2, free of cancellation
        C = Q1.T @ Qi
        disc.append(np.hypot(np.linalg.norm(Qi - Q1 @ C), np.linalg.norm(Q1 - Qi @ C.T)))
    leak = []
    for g, Qi in zip(groups, Q):
        R = g.resid_var
        RQ = R[:, None] * Qi if R.ndim == 1 else R @ Qi
        num = np.linalg.norm(RQ - Qi @ (Qi.T @ RQ))
        leak.append(num / max(np.linalg.norm(R), np.finfo(float).tiny))
    disc = np.array(disc)
    return InvarianceReport(float(disc.max()), disc, np.array(leak), tol)


def prior_B(prior, m):
    """Prior mean and variance of ``B``."""
    k = prior.k
    VM, VR = prior.var_Mbeta, prior.var_Rbeta
    var_beta = np.kron(np.ones((m, m)), VM) + np.kron(np.eye(m), VR)
    cross = np.tile(VM, (m, 1))
    var_B = np.block([[var_beta, cross], [cross.T, VM]])
    mean_B = np.tile(prior.mean_Mbeta, m + 1)
    assert var_B.shape == (k * (m + 1), k * (m + 1))
    return mean_B, var_B


def adjust_hierarchy(bh, prior, resid_projections, rel_tol=None):
    """Adjust ``B`` by the projected coefficients ``beta_hat``.

    ``cov[beta_hat_i, beta_j] = cov[beta_i, beta_j]``,
    ``cov[beta_hat_i, M] = var[M]`` and
    ``var[beta_hat] = var[beta] + blockdiag(var[R_i(beta_hat)])``.
    """
    m, k = bh.beta_hats.shape
    if k != prior.k:
        raise InvalidInputError(f"beta_hat dimension {k} != prior dimension {prior.k}")
    if len(resid_projections) != m:
        raise InvalidInputError("one residual projection per group required")
    mean_B, var_B = prior_B(prior, m)
    var_beta = var_B[: k * m, : k * m]
    noise = np.zeros((k * m, k * m))
    for i, V in enumerate(resid_projections):
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if V.shape != (k, k):
            raise InvalidInputError("residual projections must be k x k")
        noise[i * k:(i + 1) * k, i * k:(i + 1) * k] = V
    jb = JointBeliefs(
        mean_x=mean_B,
        mean_d=np.tile(prior.mean_Mbeta, m),
        cov_xx=var_B,
        cov_xd=var_B[:, : k * m],
        cov_dd=var_beta + noise,
    )
    res = adjust(jb, bh.beta_hats.reshape(-1), rel_tol=rel_tol)
    return AdjustedHierarchy(res.adj_mean, res.adj_cov, k)


def adjust_groups(groups, prior, rel_tol=None):
    """Project every group, then adjust by the projections."""
    bh = project_all(groups)
    return adjust_hierarchy(bh, prior, [projected_resid_var(g) for g in groups], rel_tol)


def adjust_hierarchy_dense(groups, prior, rel_tol=None):
    """Adjust ``B`` by the full stacked responses (oracle path).

    Builds the Hodges system ``(Y_1, ..., Y_m, 0) = G B + E`` from its
    uncorrelated primitives ``xi = (M, R_1(beta), ..., R_m(beta), R_1(Y),
    ..., R_m(Y))``: both ``B`` and the data are linear maps of ``xi``, so every
    covariance block is ``L_a var[xi] L_b'``.  The zero pseudo-responses have
    zero variance and drop out through the pseudo-inverse.
    """
    m = len(groups)
    k = prior.k
    q = [g.Phi.shape[0] for g in groups]
    for g in groups:
        if g.k != k:
            raise InvalidInputError("design column count differs from prior dimension")
    n_xi = k + k * m + sum(q)
    var_xi = np.zeros((n_xi, n_xi))
    var_xi[:k, :k] = prior.var_Mbeta
    for i in range(m):
        sl = slice(k + i * k, k + (i + 1) * k)
        var_xi[sl, sl] = prior.var_Rbeta
    off = k + k * m
    for g in groups:
        sl = slice(off, off + g.Phi.shape[0])
        var_xi[sl, sl] = g.resid_cov()
        off += g.Phi.shape[0]

    # B = L_B xi : beta_i = M + R_i(beta)
    L_B = np.zeros((k * (m + 1), n_xi))
    for i in range(m):
        L_B[i * k:(i + 1) * k, :k] = np.eye(k)
        L_B[i * k:(i + 1) * k, k + i * k:k + (i + 1) * k] = np.eye(k)
    L_B[k * m:, :k] = np.eye(k)

    # Hodges design G acting on B, plus the residual loading of the data
    n_data = sum(q) + k * m
    G = np.zeros((n_data, k * (m + 1)))
    E = np.zeros((n_data, n_xi))
    row = 0
    off = k + k * m
    for i, g in enumerate(groups):
        G[row:row + q[i], i * k:(i + 1) * k] = g.Phi
        E[row:row + q[i], off:off + q[i]] = np.eye(q[i])
        row += q[i]
        off += q[i]
    for i in range(m):
        r = slice(row + i * k, row + (i + 1) * k)
        G[r, i * k:(i + 1) * k] = -np.eye(k)
        G[r, k * m:] = np.eye(k)
        E[r, k + i * k:k + (i + 1) * k] = np.eye(k)
    L_D = G @ L_B + E

    mean_xi = np.zeros(n_xi)
    mean_xi[:k] = prior.mean_Mbeta
    data = np.concatenate([g.Y for g in groups] + [np.zeros(k * m)])
    jb = JointBeliefs(
        mean_x=L_B @ mean_xi,
        mean_d=L_D @ mean_xi,
        cov_xx=L_B @ var_xi @ L_B.T,
        cov_xd=L_B @ var_xi @ L_D.T,
        cov_dd=L_D @ var_xi @ L_D.T,
    )
    res = adjust(jb, data, rel_tol=rel_tol)
    return AdjustedHierarchy(res.adj_mean, res.adj_cov, k)


def extract_population(adj):
    """Adjusted mean and variance of ``M(beta)`` (the trailing block)."""
    k = adj.k
    return adj.adj_mean_B[-k:].copy(), adj.adj_var_B[-k:, -k:].copy()
