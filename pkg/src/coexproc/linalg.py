"""Dense and Kronecker-structured linear algebra kernels.

Everything here is a pure function of its inputs. Covariances are kept as
plain ``numpy`` arrays or as a :class:`KroneckerOp` pair of factors; the
Kronecker operator is never materialised unless :meth:`KroneckerOp.dense`
is called explicitly (tests and small oracles only).

Vector layout convention for spatio-temporal fields: a field with ``n``
time slices over ``p`` locations is flattened month-major, so entry
``t * p + s`` is month ``t`` at location ``s``.  Under this layout a
covariance ``temporal ⊗ spatial`` acts on ``v`` as
``temporal @ v.reshape(n, p) @ spatial.T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NotPSDError


def _as_matrix(M, name="M"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return M


def symmetrize(M):
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def pinv(M, rel_tol=None):
    """Moore-Penrose pseudo-inverse through the SVD.

    Singular values below ``rel_tol * s_max`` are treated as zero. The
    default ``rel_tol`` is ``1e-12 * max(rows, cols)``.
    """
    M = _as_matrix(M)
    if rel_tol is None:
        rel_tol = 1e-12 * max(M.shape) if M.size else 0.0
    if rel_tol < 0:
        raise InvalidInputError("rel_tol must be non-negative")
    if M.size == 0:
        return np.zeros(M.shape[::-1])
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s[0] == 0.0:
        return np.zeros(M.shape[::-1])
    keep = s > rel_tol * s[0]
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (Vt.T * inv_s) @ U.T


def psd_project(M, tol=1e-12, return_min=False):
    """Frobenius-nearest symmetric PSD matrix.

    The input is symmetrised and its negative eigenvalues are set to zero.
    ``tol`` is the magnitude below which an eigenvalue counts as zero; a
    matrix whose spectrum is already ``>= 0`` is returned symmetrised but
    otherwise untouched.  With ``return_min`` the smallest eigenvalue of
    the input is returned as well.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"psd_project needs a square matrix, got {M.shape}")
    S = symmetrize(M)
    if S.size == 0:
        return (S, 0.0) if return_min else S
    w, V = np.linalg.eigh(S)
    lo = float(w[0])
    if lo < 0.0:
        w = np.where(w < tol, 0.0, w)
        S = symmetrize((V * w) @ V.T)
    return (S, lo) if return_min else S


def min_eigenvalue(M):
    M = symmetrize(M)
    if M.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(M)[0])


def is_psd(M, tol=1e-10):
    """PSD check relative to the spectral scale of ``M``."""
    M = symmetrize(M)
    if M.size == 0:
        return True
    w = np.linalg.eigvalsh(M)
    scale = max(1.0, float(np.max(np.abs(w))))
    return bool(w[0] >= -tol * scale)


def sym_sqrt(M, tol=1e-10):
    """Symmetric square root ``S`` with ``S @ S.T == M``.

    Raises :class:`NotPSDError` when an eigenvalue is below
    ``-tol * max(1, |lambda|_max)``; smaller negative eigenvalues are
    rounded to zero.
    """
    M = _as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"sym_sqrt needs a square matrix, got {M.shape}")
    w, V = np.linalg.eigh(symmetrize(M))
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if w.size and w[0] < -tol * scale:
        raise NotPSDError(f"matrix has eigenvalue {w[0]:.3e} < 0")
    root = np.sqrt(np.clip(w, 0.0, None))
    return symmetrize((V * root) @ V.T)


@dataclass(frozen=True)
class KroneckerOp:
    """Lazy ``temporal ⊗ spatial`` operator of size ``n*p``."""

    temporal: np.ndarray
    spatial: np.ndarray

    def __post_init__(self):
        T = _as_matrix(self.temporal, "temporal")
        S = _as_matrix(self.spatial, "spatial")
        if T.shape[0] != T.shape[1] or S.shape[0] != S.shape[1]:
            raise InvalidInputError("Kronecker factors must be square")
        T.setflags(write=False)
        S.setflags(write=False)
        object.__setattr__(self, "temporal", T)
        object.__setattr__(self, "spatial", S)

    @property
    def n(self):
        return self.temporal.shape[0]

    @property
    def p(self):
        return self.spatial.shape[0]

    @property
    def shape(self):
        size = self.n * self.p
        return (size, size)

    def diag(self):
        return np.kron(np.diag(self.temporal), np.diag(self.spatial))

    def dense(self):
        return np.kron(self.temporal, self.spatial)

    def __matmul__(self, v):
        return kron_matvec(self, v)


def kron_matvec(K, v):
    """``(temporal ⊗ spatial) @ v`` without forming the full matrix.

    ``v`` may also be a 2-D array of stacked column vectors.
    """
    v = np.asarray(v, dtype=float)
    n, p = K.n, K.p
    if v.shape[0] != n * p:
        raise InvalidInputError(f"vector length {v.shape[0]} != n*p = {n * p}")
    if v.ndim == 1:
        V = v.reshape(n, p)
        return (K.temporal @ V @ K.spatial.T).reshape(-1)
    cols = v.shape[1]
    V = v.reshape(n, p, cols)
    out = np.einsum("ab,bpc->apc", K.temporal, V)
    out = np.einsum("qp,apc->aqc", K.spatial, out)
    return out.reshape(n * p, cols)


def kron_quadform(K, time_weights, spatial_weights):
    """Observation-space Gram ``H (temporal ⊗ spatial) H^T``.

    Row ``i`` of ``H`` is ``time_weights[i] ⊗ spatial_weights[i]``, so
    entry ``(i, j)`` is ``(a_i' T a_j) * (s_i' S s_j)``.  ``spatial_weights``
    may be a dense array or a scipy sparse matrix.
    """
    A = np.asarray(time_weights, dtype=float)
    if A.ndim != 2 or A.shape[1] != K.n:
        raise InvalidInputError(f"time weights must be (d, {K.n}), got {A.shape}")
    S = spatial_weights
    if S.shape != (A.shape[0], K.p):
        raise InvalidInputError(f"spatial weights must be ({A.shape[0]}, {K.p}), got {S.shape}")
    temporal_part = A @ K.temporal @ A.T
    SK = np.asarray(S @ K.spatial)
    spatial_part = np.asarray(S @ SK.T).T
    return symmetrize(temporal_part * spatial_part)


def rearrange(S, n, p):
    """Van Loan-Pitsianis rearrangement: row ``i*n + j`` is ``vec(S_ij)``."""
    blocks = S.reshape(n, p, n, p).transpose(0, 2, 1, 3)
    return blocks.reshape(n * n, p * p)


def nearest_kron_psd(S, n, p):
    """Nearest ``V_T ⊗ V_S`` to ``S`` in Frobenius norm, with PSD factors.

    The best Kronecker approximation is the leading singular pair of the
    rearranged matrix. Each factor is then projected onto the PSD cone.
    Both factors are returned with nonnegative trace, and the temporal factor
    is scaled to unit Frobenius norm.
    """
    S = _as_matrix(S, "S")
    if n < 1 or p < 1 or S.shape != (n * p, n * p):
        raise InvalidInputError(f"S of shape {S.shape} is not ({n}*{p}) square")
    R = rearrange(symmetrize(S), n, p)
    U, s, Vt = np.linalg.svd(R, full_matrices=False)
    if s[0] == 0.0:
        return np.zeros((n, n)), np.zeros((p, p))
    VT = symmetrize(U[:, 0].reshape(n, n)) * np.sqrt(s[0])
    VS = symmetrize(Vt[0].reshape(p, p)) * np.sqrt(s[0])
    if np.trace(VT) < 0 or (np.trace(VT) == 0 and np.trace(VS) < 0):
        VT, VS = -VT, -VS
    VT = psd_project(VT)
    VS = psd_project(VS)
    scale = np.linalg.norm(VT)
    if scale > 0:
        VT, VS = VT / scale, VS * scale
    return VT, VS


def _to_radians(lat, lon):
    return np.radians(np.asarray(lat, dtype=float)), np.radians(np.asarray(lon, dtype=float))


def check_location(lat, lon):
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise InvalidInputError("non-finite coordinates")
    if np.any(np.abs(lat) > 90.0):
        raise InvalidInputError("latitude outside [-90, 90]")
    if np.any((lon < -180.0) | (lon >= 180.0)):
        raise InvalidInputError("longitude outside [-180, 180)")


def wrap_longitude(lon):
    """Map longitudes to [-180, 180)."""
    return (np.asarray(lon, dtype=float) + 180.0) % 360.0 - 180.0


def geodesic_dist(lat1, lon1, lat2, lon2):
    """Great-circle angle in radians (haversine form, clipped to ``[0, pi]``).

    Inputs broadcast, so passing column and row vectors gives a distance
    matrix.
    """
    check_location(lat1, lon1)
    check_location(lat2, lon2)
    phi1, lam1 = _to_radians(lat1, lon1)
    phi2, lam2 = _to_radians(lat2, lon2)
    h = np.sin((phi2 - phi1) / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin((lam2 - lam1) / 2.0) ** 2
    h = np.clip(h, 0.0, 1.0)
    return 2.0 * np.arcsin(np.sqrt(h))


def distance_matrix(lat_a, lon_a, lat_b=None, lon_b=None):
    lat_a = np.asarray(lat_a, dtype=float)
    lon_a = np.asarray(lon_a, dtype=float)
    if lat_b is None:
        lat_b, lon_b = lat_a, lon_a
    lat_b = np.asarray(lat_b, dtype=float)
    lon_b = np.asarray(lon_b, dtype=float)
    return geodesic_dist(lat_a[:, None], lon_a[:, None], lat_b[None, :], lon_b[None, :])
