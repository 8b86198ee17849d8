import numpy as np
import pytest
from hypothesis import given, strategies as st

from coexproc.errors import InvalidInputError, NotPSDError
from coexproc.linalg import (KroneckerOp, distance_matrix, geodesic_dist, is_psd, kron_matvec, kron_quadform,
                             min_eigenvalue, nearest_kron_psd, pinv, psd_project, sym_sqrt)

from conftest import random_psd, rel_err

seeds = st.integers(0, 2**32 - 1)


class TestPinv:
    def test_identity_and_zero(self):
        np.testing.assert_array_equal(pinv(np.eye(3)), np.eye(3))
        np.testing.assert_array_equal(pinv(np.zeros((2, 2))), np.zeros((2, 2)))

    def test_rank_one(self):
        M = np.array([[1.0, 2.0], [2.0, 4.0]])
        P = pinv(M)
        np.testing.assert_allclose(M @ P @ M, M, atol=1e-12)
        np.testing.assert_allclose(P @ M @ P, P, atol=1e-12)
        np.testing.assert_allclose(P, M / 25.0, atol=1e-14)

    @given(seeds, st.integers(1, 50), st.integers(1, 50))
    def test_penrose_conditions(self, seed, r, c):
        rng = np.random.default_rng(seed)
        rank = rng.integers(1, min(r, c) + 1)
        M = rng.standard_normal((r, rank)) @ rng.standard_normal((rank, c))
        P = pinv(M)
        assert rel_err(M @ P @ M, M) <= 1e-10
        assert rel_err(P @ M @ P, P) <= 1e-10

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            pinv(np.array([[np.nan]]))

    def test_truncation(self):
        P = pinv(np.diag([1.0, 1e-6]), rel_tol=1e-3)
        np.testing.assert_array_equal(P, np.diag([1.0, 0.0]))


class TestPsdProject:
    def test_fixed_point(self, rng):
        M = random_psd(rng, 5)
        np.testing.assert_allclose(psd_project(M), M, atol=1e-14)

    def test_clipping(self):
        out = psd_project(np.diag([1.0, -1e-15]), tol=1e-12)
        np.testing.assert_array_equal(out, np.diag([1.0, 0.0]))

    @given(seeds)
    def test_matches_eigen_clipping(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((4, 4))
        S = (A + A.T) / 2
        w, V = np.linalg.eigh(S)
        oracle = (V * np.clip(w, 0, None)) @ V.T
        out = psd_project(S)
        np.testing.assert_allclose(out, oracle, atol=1e-12)
        assert min_eigenvalue(out) >= -1e-12

    def test_nonsquare(self):
        with pytest.raises(InvalidInputError):
            psd_project(np.zeros((2, 3)))

    def test_reports_minimum(self):
        _, lo = psd_project(np.diag([2.0, -0.5]), return_min=True)
        assert lo == -0.5


class TestSymSqrt:
    def test_diagonal(self):
        np.testing.assert_allclose(sym_sqrt(np.eye(3)), np.eye(3))
        np.testing.assert_allclose(sym_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    def test_ones_matrix(self):
        n = 5
        np.testing.assert_allclose(sym_sqrt(np.ones((n, n))), np.ones((n, n)) / np.sqrt(n), atol=1e-14)

    @given(seeds)
    def test_reconstructs(self, seed):
        M = random_psd(np.random.default_rng(seed), 5)
        S = sym_sqrt(M)
        assert np.linalg.norm(S @ S.T - M) <= 1e-10

    def test_not_psd(self):
        with pytest.raises(NotPSDError):
            sym_sqrt(np.diag([1.0, -1.0]))


class TestKronecker:
    def test_identity(self):
        K = KroneckerOp(np.eye(2), np.eye(3))
        v = np.arange(6.0)
        np.testing.assert_array_equal(K @ v, v)

    def test_hand_example(self):
        K = KroneckerOp(np.ones((2, 2)), np.eye(2))
        np.testing.assert_array_equal(kron_matvec(K, np.array([1.0, 2.0, 3.0, 4.0])), [4.0, 6.0, 4.0, 6.0])

    @given(seeds, st.integers(1, 6), st.integers(1, 6))
    def test_matvec_dense(self, seed, n, p):
        rng = np.random.default_rng(seed)
        K = KroneckerOp(rng.standard_normal((n, n)), rng.standard_normal((p, p)))
        v = rng.standard_normal(n * p)
        assert rel_err(kron_matvec(K, v), K.dense() @ v) <= 1e-12
        V = rng.standard_normal((n * p, 3))
        assert rel_err(kron_matvec(K, V), K.dense() @ V) <= 1e-12

    @given(seeds, st.integers(1, 6), st.integers(1, 6), st.integers(1, 8))
    def test_quadform_dense(self, seed, n, p, d):
        rng = np.random.default_rng(seed)
        K = KroneckerOp(random_psd(rng, n), random_psd(rng, p))
        A = rng.uniform(size=(d, n))
        S = rng.uniform(size=(d, p))
        H = np.stack([np.kron(a, s) for a, s in zip(A, S)])
        assert rel_err(kron_quadform(K, A, S), H @ K.dense() @ H.T) <= 1e-12

    def test_quadform_ones_collapse(self, rng):
        n, p, d = 3, 5, 4
        VS = random_psd(rng, p)
        K = KroneckerOp(np.ones((n, n)), VS)
        A = rng.uniform(size=(d, n))
        A /= A.sum(axis=1, keepdims=True)
        S = rng.uniform(size=(d, p))
        np.testing.assert_allclose(kron_quadform(K, A, S), S @ VS @ S.T, rtol=1e-13)

    def test_quadform_single_node(self, rng):
        n, p = 3, 4
        VT, VS = random_psd(rng, n), random_psd(rng, p)
        a = np.full((1, n), 1.0 / n)
        s = np.zeros((1, p))
        s[0, 2] = 1.0
        out = kron_quadform(KroneckerOp(VT, VS), a, s)
        np.testing.assert_allclose(out, [[VT.sum() / n**2 * VS[2, 2]]], rtol=1e-13)

    def test_mismatch(self):
        K = KroneckerOp(np.eye(2), np.eye(3))
        with pytest.raises(InvalidInputError):
            kron_matvec(K, np.ones(5))
        with pytest.raises(InvalidInputError):
            kron_quadform(K, np.ones((1, 3)), np.ones((1, 3)))


def _same_up_to_scale(A, B):
    c = np.sum(A * B) / np.sum(B * B)
    return c > 0 and rel_err(A, c * B) <= 1e-8


class TestNearestKron:
    @given(seeds, st.integers(1, 4), st.integers(1, 4))
    def test_exact_case(self, seed, n, p):
        rng = np.random.default_rng(seed)
        VT, VS = random_psd(rng, n), random_psd(rng, p)
        T, S = nearest_kron_psd(np.kron(VT, VS), n, p)
        assert _same_up_to_scale(T, VT) and _same_up_to_scale(S, VS)
        assert rel_err(np.kron(T, S), np.kron(VT, VS)) <= 1e-8

    def test_identity(self):
        T, S = nearest_kron_psd(np.eye(6), 2, 3)
        assert _same_up_to_scale(T, np.eye(2)) and _same_up_to_scale(S, np.eye(3))
        assert np.trace(T) >= 0 and np.trace(S) >= 0

    def test_beats_random_pairs(self, rng):
        n, p = 2, 3
        M = random_psd(rng, n * p)
        T, S = nearest_kron_psd(M, n, p)
        best = np.linalg.norm(M - np.kron(T, S))
        for _ in range(1000):
            A, B = random_psd(rng, n), random_psd(rng, p)
            # allow the optimal scalar so the comparison is about shape
            K = np.kron(A, B)
            c = max(np.sum(M * K) / np.sum(K * K), 0.0)
            assert best <= np.linalg.norm(M - c * K) + 1e-12

    def test_bad_shape(self):
        with pytest.raises(InvalidInputError):
            nearest_kron_psd(np.eye(5), 2, 3)


class TestGeodesic:
    def test_known_values(self):
        assert geodesic_dist(10.0, 20.0, 10.0, 20.0) == 0.0
        assert geodesic_dist(0.0, 0.0, 0.0, -180.0) == pytest.approx(np.pi, abs=1e-15)
        assert geodesic_dist(0.0, 0.0, 0.0, 90.0) == pytest.approx(np.pi / 2, abs=1e-15)

    @given(seeds)
    def test_metric(self, seed):
        rng = np.random.default_rng(seed)
        lat = rng.uniform(-90, 90, 3)
        lon = rng.uniform(-180, 180, 3)
        D = distance_matrix(lat, lon)
        np.testing.assert_allclose(D, D.T, atol=1e-12)
        assert np.all(D >= 0) and np.all(D <= np.pi)
        assert D[0, 2] <= D[0, 1] + D[1, 2] + 1e-12

    def test_rejects_bad_coordinates(self):
        with pytest.raises(InvalidInputError):
            geodesic_dist(91.0, 0.0, 0.0, 0.0)
        with pytest.raises(InvalidInputError):
            geodesic_dist(0.0, 180.0, 0.0, 0.0)

    def test_is_psd_tolerance(self):
        assert is_psd(np.diag([1.0, -1e-12]))
        assert not is_psd(np.diag([1.0, -1e-3]))
