import numpy as np
import pytest
from hypothesis import given, strategies as st

from coexproc.errors import InvalidInputError
from coexproc.hier_process import (BetaHatSet, GroupData, HierPrior, adjust_groups, adjust_hierarchy,
                                   adjust_hierarchy_dense, check_projection_invariance, extract_population,
                                   prior_B, project_all, project_beta_hat, projected_resid_var)
from coexproc.linalg import min_eigenvalue

from conftest import random_psd, rel_err
from oracles import compatible_groups, rotated_groups

seeds = st.integers(0, 2**32 - 1)


def random_prior(rng, k, alpha2=1.0):
    return HierPrior(rng.standard_normal(k), random_psd(rng, k) + 0.1 * np.eye(k),
                     alpha2 * (random_psd(rng, k) + 0.1 * np.eye(k)))


def max_rel(a, b):
    return max(rel_err(a.adj_mean_B, b.adj_mean_B), rel_err(a.adj_var_B, b.adj_var_B))


class TestProjection:
    def test_in_span(self, rng):
        Phi = rng.standard_normal((10, 3))
        beta, r = project_beta_hat(GroupData(Phi, Phi @ [1.0, -2.0, 0.5], 0.1))
        np.testing.assert_allclose(beta, [1.0, -2.0, 0.5], atol=1e-12)
        assert r <= 1e-12

    def test_orthonormal(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((10, 3)))
        y = rng.standard_normal(10)
        np.testing.assert_allclose(project_beta_hat(GroupData(Q, y, 1.0))[0], Q.T @ y, atol=1e-13)

    def test_normal_equations(self, rng):
        Phi, y = rng.standard_normal((20, 3)), rng.standard_normal(20)
        ref = np.linalg.solve(Phi.T @ Phi, Phi.T @ y)
        assert rel_err(project_beta_hat(GroupData(Phi, y, 1.0))[0], ref) <= 1e-10

    def test_zero_design(self):
        with pytest.raises(InvalidInputError):
            project_beta_hat(GroupData(np.zeros((3, 2)), np.ones(3), 1.0))


class TestInvariance:
    def test_equal_designs(self, rng):
        Phi = rng.standard_normal((8, 2))
        rep = check_projection_invariance([GroupData(Phi, rng.standard_normal(8), 1.0) for _ in range(3)])
        assert rep.max_projection_discrepancy <= 1e-13 and rep.passed and rep.residuals_compatible

    def test_right_multiplication(self, rng):
        Phi = rng.standard_normal((8, 2))
        A = rng.standard_normal((2, 2)) + 3 * np.eye(2)
        rep = check_projection_invariance([GroupData(Phi, np.ones(8), 1.0), GroupData(Phi @ A, np.ones(8), 1.0)])
        assert rep.max_projection_discrepancy <= 1e-13

    def test_rotated(self, rng):
        rep = check_projection_invariance(rotated_groups(rng))
        assert rep.max_projection_discrepancy > 1e-3 and not rep.passed

    def test_heteroskedastic_leakage_reported(self, rng):
        Phi = rng.standard_normal((8, 2))
        rep = check_projection_invariance([GroupData(Phi, np.ones(8), rng.uniform(0.1, 1, 8)) for _ in range(2)])
        assert rep.passed and not rep.residuals_compatible


class TestAdjustHierarchy:
    @given(seeds, st.integers(1, 4), st.integers(1, 3))
    def test_matches_dense_when_sufficient(self, seed, m, k):
        rng = np.random.default_rng(seed)
        groups = compatible_groups(rng, m=m, q=10, k=k)
        rep = check_projection_invariance(groups)
        assert rep.passed and rep.residuals_compatible
        prior = random_prior(rng, k)
        assert max_rel(adjust_groups(groups, prior), adjust_hierarchy_dense(groups, prior)) <= 1e-8

    def test_counterexample_differs(self, rng):
        groups = rotated_groups(rng)
        prior = random_prior(rng, 2)
        a, b = adjust_groups(groups, prior), adjust_hierarchy_dense(groups, prior)
        assert np.abs(a.adj_mean_B - b.adj_mean_B).max() > 1e-3

    def test_noise_free_pinning(self, rng):
        k, m = 2, 3
        prior = random_prior(rng, k)
        bh = BetaHatSet(rng.standard_normal((m, k)), np.zeros(m))
        adj = adjust_hierarchy(bh, prior, [1e-8 * np.eye(k)] * m)
        for i in range(m):
            np.testing.assert_allclose(adj.group(i)[0], bh.beta_hats[i], atol=1e-6)

    def test_single_group_is_regression(self, rng):
        g = compatible_groups(rng, m=1)[0]
        prior = random_prior(rng, 2)
        adj = adjust_groups([g], prior)
        # direct regression: beta = M + R, y_hat = beta + noise
        V = prior.var_Mbeta + prior.var_Rbeta
        N = projected_resid_var(g)
        b = project_all([g]).beta_hats[0]
        G = V @ np.linalg.inv(V + N)
        np.testing.assert_allclose(adj.group(0)[0], prior.mean_Mbeta + G @ (b - prior.mean_Mbeta), rtol=1e-10)

    def test_zero_population_variance(self, rng):
        groups = compatible_groups(rng)
        prior = HierPrior(np.array([0.3, -0.2]), np.zeros((2, 2)), np.eye(2))
        mean, var = extract_population(adjust_hierarchy_dense(groups, prior))
        np.testing.assert_allclose(mean, [0.3, -0.2], atol=1e-14)
        np.testing.assert_allclose(var, 0.0, atol=1e-14)

    def test_decoupling(self, rng):
        groups = compatible_groups(rng)
        prior = HierPrior(np.zeros(2), np.eye(2), 1e8 * np.eye(2))
        adj = adjust_hierarchy_dense(groups, prior)
        bh = project_all(groups).beta_hats
        for i, g in enumerate(groups):
            # with huge R(beta) each group is pinned by its own projection
            np.testing.assert_allclose(adj.group(i)[0], bh[i], rtol=1e-4, atol=1e-4)

    def test_psd_ordering(self, rng):
        groups = rotated_groups(rng)
        prior = random_prior(rng, 2)
        _, VB = prior_B(prior, len(groups))
        for adj in (adjust_groups(groups, prior), adjust_hierarchy_dense(groups, prior)):
            assert min_eigenvalue(VB - adj.adj_var_B) >= -1e-10
            assert min_eigenvalue(adj.adj_var_B) >= -1e-10

    def test_permutation_equivariance(self, rng):
        groups = compatible_groups(rng, m=3)
        prior = random_prior(rng, 2)
        a = adjust_groups(groups, prior)
        b = adjust_groups([groups[2], groups[0], groups[1]], prior)
        for i, j in ((0, 1), (1, 2), (2, 0)):
            np.testing.assert_allclose(a.group(i)[0], b.group(j)[0], rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(extract_population(a)[0], extract_population(b)[0], rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(extract_population(a)[1], extract_population(b)[1], rtol=1e-12, atol=1e-14)

    def test_symmetric_population_mean(self, rng):
        Phi = rng.standard_normal((8, 2))
        y = rng.standard_normal(8)
        groups = [GroupData(Phi, y, 0.2), GroupData(Phi, -y, 0.2)]
        prior = HierPrior(np.zeros(2), np.eye(2), np.eye(2))
        adj = adjust_groups(groups, prior)
        np.testing.assert_allclose(extract_population(adj)[0], 0.0, atol=1e-13)
        np.testing.assert_allclose(adj.group(0)[0], -adj.group(1)[0], atol=1e-13)

    def test_scalar_hand_solution(self):
        # k=1, m=1: B = (beta, M), data beta_hat = beta + e
        prior = HierPrior([0.0], [[1.0]], [[1.0]])
        g = GroupData(np.ones((1, 1)), [2.0], 1.0)
        adj = adjust_groups([g], prior)
        # var[beta]=2, var[beta_hat]=3, cov[M, beta_hat]=1
        np.testing.assert_allclose(adj.adj_mean_B, [2.0 * 2 / 3, 2.0 / 3], rtol=1e-14)

    def test_shrinkage_interval(self, rng):
        phi = np.ones((6, 1))
        groups = [GroupData(phi, rng.normal(c, 0.3, 6), 0.1) for c in (-1.0, 0.5, 2.0)]
        prior = HierPrior([0.2], [[1.0]], [[0.5]])
        adj = adjust_groups(groups, prior)
        bh = project_all(groups).beta_hats[:, 0]
        pop = extract_population(adj)[0][0]
        for i in range(3):
            lo, hi = sorted((bh[i], pop))
            assert lo - 1e-10 <= adj.group(i)[0][0] <= hi + 1e-10

    def test_dimension_errors(self, rng):
        prior = random_prior(rng, 2)
        bh = BetaHatSet(np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(InvalidInputError):
            adjust_hierarchy(bh, prior, [np.eye(3)] * 2)
