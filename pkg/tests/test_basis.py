import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from coexproc.basis import (ISplineBasis, WendlandParams, build_design, build_designs, fit_theta_hat,
                            fitted_values, hetero_residual_var, ispline_eval, pca_spatial_basis, wendland,
                            wendland_cov, wendland_gram)
from coexproc.errors import DegenerateEnsembleError, InvalidInputError
from coexproc.linalg import min_eigenvalue

seeds = st.integers(0, 2**32 - 1)


def mspline(x, i, k, t):
    """Normalised M-spline by the Curry-Schoenberg recursion (independent oracle)."""
    if k == 1:
        if t[i] <= x < t[i + 1]:
            return 1.0 / (t[i + 1] - t[i])
        return 0.0
    width = t[i + k] - t[i]
    if width == 0:
        return 0.0
    return k * ((x - t[i]) * mspline(x, i, k - 1, t) + (t[i + k] - x) * mspline(x, i + 1, k - 1, t)) \
        / ((k - 1) * width)


def ispline_quadrature(b, x):
    t = b.knot_vector
    lo = b.boundary[0]
    breaks = [k for k in np.unique(t) if lo < k < x]
    return np.array([quad(mspline, lo, x, args=(i, b.order, t), points=breaks or None, epsabs=1e-13)[0]
                     for i in range(b.n_splines)])


class TestISpline:
    def test_boundaries(self):
        b = ISplineBasis()
        below = ispline_eval(b, np.array([-5.0, -2.0]))
        above = ispline_eval(b, np.array([30.0, 45.0]))
        np.testing.assert_array_equal(below[:, 1:], 0.0)
        np.testing.assert_array_equal(above[:, 1:], 1.0)
        np.testing.assert_array_equal(below[:, 0], 1.0)

    def test_single_knot_order_two_midpoint(self):
        b = ISplineBasis(order=2, interior_knots=(1.0,), boundary=(-1.0, 3.0), include_intercept=False)
        for x in (0.0, 0.5, 1.0, 2.0):
            np.testing.assert_allclose(ispline_eval(b, x), ispline_quadrature(b, x), atol=1e-8)

    @pytest.mark.parametrize("order", [2, 3, 4])
    def test_default_knots_quadrature(self, order):
        b = ISplineBasis(order=order, include_intercept=False)
        for x in np.linspace(-1.9, 29.0, 7):
            np.testing.assert_allclose(ispline_eval(b, x), ispline_quadrature(b, x), atol=1e-8)

    def test_monotone_random_pairs(self, rng):
        b = ISplineBasis()
        t = np.sort(rng.uniform(-10, 40, (1000, 2)), axis=1)
        lo, hi = ispline_eval(b, t[:, 0]), ispline_eval(b, t[:, 1])
        assert np.sum(lo > hi) == 0
        assert lo.min() >= 0 and hi.max() <= 1

    def test_invalid_knots(self):
        with pytest.raises(InvalidInputError):
            ISplineBasis(interior_knots=(1.0, 0.0))
        with pytest.raises(InvalidInputError):
            ISplineBasis(interior_knots=(40.0,))
        with pytest.raises(InvalidInputError):
            ISplineBasis(order=1)


class TestDesign:
    def test_cold_field(self):
        D = build_design(ISplineBasis(), np.full(4, -3.0))
        np.testing.assert_array_equal(D[:, 0], 1.0)
        np.testing.assert_array_equal(D[:, 1:], 0.0)

    def test_constant_field_rows(self):
        D = build_design(ISplineBasis(), np.full(5, 2.2))
        assert np.all(D == D[0])

    def test_rowwise(self, rng):
        b = ISplineBasis()
        x = rng.uniform(-3, 31, 9)
        D = build_design(b, x)
        for s in range(9):
            np.testing.assert_array_equal(D[s], ispline_eval(b, x[s]))


class TestFitTheta:
    def test_exact_span(self, rng):
        b = ISplineBasis()
        n, p = 12, 3
        G = build_designs(b, rng.uniform(-2, 6, (n, p)))
        theta = rng.standard_normal(b.n_functions * p)
        Y = fitted_values(theta, G)
        fit = fit_theta_hat(Y, G, rel_tol=1e-12)
        np.testing.assert_allclose(fitted_values(fit, G), Y, atol=1e-10)

    def test_zero_response(self, rng):
        G = build_designs(ISplineBasis(), rng.uniform(-2, 6, (4, 2)))
        np.testing.assert_array_equal(fit_theta_hat(np.zeros((4, 2)), G), 0.0)
        np.testing.assert_array_equal(fit_theta_hat(np.zeros((4, 2)), G, monotone="decreasing"), 0.0)

    def test_monotone_curve_one_location(self):
        b = ISplineBasis()
        t = np.linspace(-1.8, 5.0, 12)
        w = np.array([0.2, 0.5, 0.3, 0.0, 0.0, 0.0])
        y = 1.0 - ispline_eval(b, t)[:, 1:] @ w
        G = build_designs(b, t[:, None])
        theta = fit_theta_hat(y[:, None], G, rel_tol=0.0)
        # direct least-squares oracle
        ref, *_ = np.linalg.lstsq(G[:, 0, :], y, rcond=None)
        fv = fitted_values(theta, G)[:, 0]
        assert np.linalg.norm(fv - y) / np.linalg.norm(y) <= 1e-8
        np.testing.assert_allclose(fv, G[:, 0, :] @ ref, atol=1e-10)

    def test_decreasing_constraint(self, rng):
        b = ISplineBasis()
        x = rng.uniform(-2, 8, (12, 6))
        G = build_designs(b, x)
        Y = rng.uniform(0, 1, (12, 6))
        theta = fit_theta_hat(Y, G, monotone="decreasing").reshape(b.n_functions, 6)
        assert np.all(theta[1:] <= 0)
        theta = fit_theta_hat(Y, G, monotone="increasing").reshape(b.n_functions, 6)
        assert np.all(theta[1:] >= 0)

    def test_bounded_when_collinear(self):
        # every spline but the last is saturated: the design is nearly rank two
        b = ISplineBasis()
        x = np.linspace(24.0, 27.0, 12)[:, None]
        G = build_designs(b, x)
        y = np.full((12, 1), 0.02) + 0.001 * np.sin(np.arange(12))[:, None]
        for mode in (None, "decreasing"):
            assert np.abs(fit_theta_hat(y, G, monotone=mode)).max() < 10.0

    def test_errors(self):
        with pytest.raises(InvalidInputError):
            fit_theta_hat(np.zeros((0, 2)), np.zeros((0, 2, 3)))
        with pytest.raises(InvalidInputError):
            fit_theta_hat(np.zeros((2, 2)), np.zeros((2, 2, 3)), monotone="up")


class TestPCA:
    def test_two_members(self, rng):
        T = rng.standard_normal((2, 10))
        sb = pca_spatial_basis(T)
        assert sb.k == 1
        diff = (T[1] - T[0]) / np.linalg.norm(T[1] - T[0])
        assert abs(abs(sb.columns[:, 0] @ diff) - 1.0) <= 1e-12

    def test_recovers_perturbations(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((20, 2)))
        coef = rng.standard_normal((30, 2)) * [5.0, 2.0]
        coef -= coef.mean(axis=0)
        T = 3.0 + coef @ Q.T
        sb = pca_spatial_basis(T, energy=0.999999)
        assert sb.k == 2
        s = np.linalg.svd(Q.T @ sb.columns, compute_uv=False)
        assert np.arccos(min(s.min(), 1.0)) <= 1e-6

    @given(seeds, st.integers(2, 7))
    def test_full_energy(self, seed, m):
        rng = np.random.default_rng(seed)
        T = rng.standard_normal((m, 12))
        sb = pca_spatial_basis(T, energy=1.0)
        assert sb.k == min(m - 1, 12)
        np.testing.assert_allclose(sb.columns.T @ sb.columns, np.eye(sb.k), atol=1e-10)
        assert np.all(np.diff(sb.eigenvalues) <= 1e-12) and np.all(sb.eigenvalues >= 0)
        C = T - sb.center
        np.testing.assert_allclose(C @ sb.columns @ sb.columns.T, C, atol=1e-8)

    def test_identical_members(self):
        with pytest.raises(DegenerateEnsembleError):
            pca_spatial_basis(np.ones((3, 4)))


class TestResidualVariance:
    def test_closed_forms(self):
        lo, hi, c, w = 1e-4, 0.04, 1.0, 2.0
        assert hetero_residual_var(c) == hi
        assert hetero_residual_var(1e6) == pytest.approx(lo)
        assert hetero_residual_var(-1e6) == pytest.approx(lo)
        assert hetero_residual_var(c + w) == pytest.approx(lo + (hi - lo) * np.exp(-0.5), rel=1e-15)

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            hetero_residual_var(0.0, sigma2_min=0.1, sigma2_max=0.01)


class TestWendland:
    w = WendlandParams(1.61, 0.92, 6.0)

    def test_values(self):
        assert wendland(0.0, self.w) == 1.61
        assert wendland(0.92, self.w) == 0.0
        assert wendland(2.0, self.w) == 0.0
        assert wendland(0.46, self.w) == pytest.approx(0.17400, abs=1e-4)
        assert wendland(0.46, self.w) == pytest.approx(1.61 * (1 + 3 + 35 / 12) * 0.5**6, rel=1e-14)

    def test_cov_and_symmetry(self, rng):
        assert wendland_cov(10.0, 20.0, 10.0, 20.0, self.w) == 1.61
        la, lo = rng.uniform(-60, 60, 2), rng.uniform(-180, 180, 2)
        assert wendland_cov(la[0], lo[0], la[1], lo[1], self.w) == wendland_cov(la[1], lo[1], la[0], lo[0], self.w)

    @given(seeds, st.floats(0.05, np.pi))
    def test_gram_psd(self, seed, c):
        rng = np.random.default_rng(seed)
        lat = np.degrees(np.arcsin(rng.uniform(-1, 1, 50)))
        lon = rng.uniform(-180, 180, 50)
        K = wendland_gram(lat, lon, WendlandParams(1.0, c, 6.0))
        assert min_eigenvalue(K) >= -1e-10

    def test_params(self):
        for bad in ((0.0, 1.0, 6.0), (1.0, 0.0, 6.0), (1.0, 1.0, 5.0)):
            with pytest.raises(InvalidInputError):
                WendlandParams(*bad)
