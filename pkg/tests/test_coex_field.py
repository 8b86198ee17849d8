import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coexproc.basis import WendlandParams
from coexproc.coex_field import (DATA_ADJUSTED, ENSEMBLE_ADJUSTED, CoexFieldSpec, FieldEnsemble, ObservationSet,
                                 PseudoObsConfig, add_pseudo_observations, build_error_model, empty_observations,
                                 ensemble_mean, estimate_var_MX, first_stage_prefactor, first_update_field,
                                 fit_field_spec, make_observations, nordic_blocks, second_update_field)
from coexproc.errors import ConditioningWarning, DegenerateEnsembleError, InvalidInputError
from coexproc.grid import MONTHS, Grid, regular_grid
from coexproc.linalg import min_eigenvalue, sym_sqrt

from conftest import random_psd, rel_err
from oracles import dense_field_joint, dense_field_second, random_field_instance

seeds = st.integers(0, 2**32 - 1)


def small_grid(p=6):
    return regular_grid(2, p // 2, (-40.0, 40.0))


class TestEnsemble:
    def test_mean(self, rng):
        g = small_grid()
        v = rng.standard_normal(12)
        e = FieldEnsemble(np.stack([v, v]), 2, g)
        np.testing.assert_array_equal(ensemble_mean(e), v)
        e = FieldEnsemble(np.stack([v, -v]), 2, g)
        np.testing.assert_array_equal(ensemble_mean(e), 0.0)
        X = rng.standard_normal((3, 12))
        np.testing.assert_allclose(ensemble_mean(FieldEnsemble(X, 2, g)), X.sum(axis=0) / 3)

    def test_shape_checks(self):
        with pytest.raises(InvalidInputError):
            FieldEnsemble(np.zeros((2, 5)), 2, small_grid())
        with pytest.raises(InvalidInputError):
            FieldEnsemble(np.full((2, 12), np.nan), 2, small_grid())


class TestEstimateVar:
    def test_monte_carlo_recovery(self, rng):
        g = regular_grid(2, 3, (-40, 40))
        n, p, m = 3, g.p, 200
        V = random_psd(rng, p) + 0.5 * np.eye(p)
        dev = rng.standard_normal((m, p)) @ sym_sqrt(V)
        members = np.repeat(dev[:, None, :], n, axis=1).reshape(m, -1)
        VT, VMS = estimate_var_MX(FieldEnsemble(members, n, g), alpha2=1.0)
        np.testing.assert_array_equal(VT, np.ones((n, n)))
        assert rel_err(2.0 * VMS, V) <= 0.2

    def test_alpha_halves(self, rng):
        g = small_grid()
        e = FieldEnsemble(rng.standard_normal((5, 12)), 2, g)
        _, VM1 = estimate_var_MX(e, alpha2=1.0)
        _, VM3 = estimate_var_MX(e, alpha2=3.0)
        np.testing.assert_allclose(VM1 * 2.0, VM3 * 4.0, rtol=1e-14)

    def test_free_temporal(self, rng):
        g = small_grid()
        e = FieldEnsemble(rng.standard_normal((6, 12)), 2, g)
        VT, VS = estimate_var_MX(e, temporal="free")
        assert min_eigenvalue(VT) >= -1e-12 and min_eigenvalue(VS) >= -1e-12

    def test_degenerate(self):
        g = small_grid()
        with pytest.raises(DegenerateEnsembleError):
            estimate_var_MX(FieldEnsemble(np.ones((3, 12)), 2, g))
        with pytest.raises(DegenerateEnsembleError):
            estimate_var_MX(FieldEnsemble(np.ones((1, 12)), 2, g))


class TestFirstUpdate:
    def test_prefactor(self):
        assert first_stage_prefactor(1.0, 13) == 1.0 / 14.0
        assert first_stage_prefactor(1.0, 10**6) < 1e-5

    def test_mean_and_variance(self, rng):
        e, spec, _, _ = random_field_instance(rng, 6, 2, 13, 1)
        rec = first_update_field(e, spec)
        assert rec.stage == ENSEMBLE_ADJUSTED
        np.testing.assert_array_equal(rec.mean, ensemble_mean(e))
        np.testing.assert_array_equal(rec.var_temporal, np.ones((2, 2)))
        VU = spec.discrepancy_spatial(e.grid)
        np.testing.assert_allclose(rec.var_spatial, spec.var_MS / 14.0 + VU, rtol=1e-14)

    def test_large_m_limit(self, rng):
        g = small_grid()
        VU = np.eye(g.p) * 0.3
        spec = CoexFieldSpec(1.0, np.ones((2, 2)), random_psd(rng, g.p), WendlandParams(0.3, 0.01, 6.0))
        e = FieldEnsemble(rng.standard_normal((2, 12)), 2, g)
        prefactor = first_stage_prefactor(1.0, 10**6)
        VS = prefactor * spec.var_MS + spec.discrepancy_spatial(g)
        np.testing.assert_allclose(VS, VU, atol=1e-5)

    def test_dimension_mismatch(self, rng):
        e, spec, _, _ = random_field_instance(rng, 6, 2, 3, 1)
        other = FieldEnsemble(rng.standard_normal((3, 18)), 3, e.grid)
        with pytest.raises(InvalidInputError):
            first_update_field(other, spec)

    def test_member_permutation(self, rng):
        e, spec, _, _ = random_field_instance(rng, 6, 2, 4, 1)
        perm = FieldEnsemble(e.members[[2, 0, 3, 1]], e.n, e.grid)
        a = first_update_field(e, spec)
        b = first_update_field(perm, fit_field_spec(perm))
        np.testing.assert_allclose(a.mean, b.mean, rtol=0, atol=1e-14)
        np.testing.assert_allclose(a.var_spatial, b.var_spatial, rtol=1e-13)


class TestObservations:
    def test_pseudo_defaults(self):
        g = regular_grid(3, 4)
        obs = add_pseudo_observations(empty_observations(12, g.p), g, MONTHS)
        assert obs.d == 20
        np.testing.assert_array_equal(obs.values, -1.92)
        gaps = np.diff(obs.lons[:10])
        np.testing.assert_allclose(gaps, 36.0)
        np.testing.assert_allclose(obs.time_weights, 1.0 / 12)
        same = add_pseudo_observations(obs, g, MONTHS, PseudoObsConfig(count=0))
        assert same.d == 20

    def test_error_model(self):
        g = small_grid()
        obs = make_observations([70.0, 71.0, 10.0], [10.0, 12.0, 0.0], [1.0, 2.0, 3.0], [1.0, 1.0, 0.5], g,
                                ("Jan", "Feb"), bias_mean=[2.0, 2.0, 0.0], bias_block=["nordic", "nordic", None])
        bias, V = build_error_model(obs)
        np.testing.assert_array_equal(bias, [2.0, 2.0, 0.0])
        np.testing.assert_array_equal(V[:2, :2], [[1.0, 1.0], [1.0, 1.0]])
        np.testing.assert_allclose(np.linalg.eigvalsh(V[:2, :2]), [0.0, 2.0], atol=1e-15)
        np.testing.assert_array_equal(V[2], [0.0, 0.0, 0.25])

    def test_no_blocks_diagonal(self):
        g = small_grid()
        obs = make_observations([0.0, 5.0], [0.0, 5.0], [1.0, 2.0], [0.5, 2.0], g, ("Jan", "Feb"))
        np.testing.assert_array_equal(build_error_model(obs)[1], np.diag([0.25, 4.0]))

    def test_nordic_labels(self):
        labels = nordic_blocks([63.0, 61.0, 70.0], [10.0, 10.0, 100.0], lon_window=(-30.0, 40.0))
        assert labels == ("nordic", None, None)

    def test_weight_validation(self):
        with pytest.raises(InvalidInputError):
            ObservationSet([1.0], [[0.5, 0.4]], [[1.0, 0.0]], 0.0, 1.0)
        obs = ObservationSet([1.0], [[0.5, 0.5]], [[1.0, 0.0]], 0.0, 0.0)
        with pytest.raises(InvalidInputError):
            build_error_model(obs)


class TestSecondUpdate:
    def test_no_observations(self, rng):
        e, spec, _, _ = random_field_instance(rng, 6, 2, 3, 1)
        rec = first_update_field(e, spec)
        out = second_update_field(rec, empty_observations(2, 6))
        assert out.stage == DATA_ADJUSTED
        np.testing.assert_array_equal(out.mean, rec.mean)
        np.testing.assert_array_equal(out.var_spatial, rec.var_spatial)

    def test_exact_observation_pins_node(self, rng):
        e, spec, _, _ = random_field_instance(rng, 6, 2, 3, 1)
        rec = first_update_field(e, spec)
        k = 3
        obs = make_observations([e.grid.lats[k]], [e.grid.lons[k]], [4.2], [1e-6], e.grid, e.month_labels)
        out = second_update_field(rec, obs)
        annual = out.mean.reshape(2, 6)[:, k].mean()
        assert abs(annual - 4.2) <= 1e-3

    @given(seeds, st.integers(2, 12), st.integers(1, 3), st.integers(1, 6), st.integers(2, 5))
    def test_dense_oracle(self, seed, p, n, d, m):
        rng = np.random.default_rng(seed)
        e, spec, _, obs = random_field_instance(rng, p, n, m, d)
        rec = first_update_field(e, spec)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConditioningWarning)
            out = second_update_field(rec, obs)
        ref = dense_field_second(rec, obs)
        assert rel_err(out.mean, ref.adj_mean) <= 1e-8
        assert rel_err(np.kron(out.var_temporal, out.var_spatial), ref.adj_cov) <= 1e-8
        assert min_eigenvalue(rec.var_spatial - out.var_spatial) >= -1e-10

    def test_two_stage_matches_joint_dense(self, rng):
        e, spec, mu, obs = random_field_instance(rng, 12, 3, 5, 5)
        rec = second_update_field(first_update_field(e, spec, prior_mean_M=mu), obs)
        ref = dense_field_joint(e, spec, obs, mu)
        assert rel_err(rec.mean, ref.adj_mean) <= 1e-8
        assert rel_err(np.kron(rec.var_temporal, rec.var_spatial), ref.adj_cov) <= 1e-8

    def test_bias_shift_invariance(self, rng):
        e, spec, _, obs = random_field_instance(rng, 8, 2, 3, 4)
        rec = first_update_field(e, spec)
        a = second_update_field(rec, obs)
        inblock = np.array([b == "b" for b in obs.bias_block])
        shifted = ObservationSet(obs.values + 1.5 * inblock, obs.time_weights, obs.spatial_weights,
                                 obs.bias_mean + 1.5 * inblock, obs.sd, obs.bias_block, obs.lats, obs.lons)
        b = second_update_field(rec, shifted)
        np.testing.assert_allclose(a.mean, b.mean, rtol=1e-12)

    def test_requires_first_stage(self, rng):
        e, spec, _, obs = random_field_instance(rng, 6, 2, 3, 2)
        rec = second_update_field(first_update_field(e, spec), obs)
        with pytest.raises(InvalidInputError):
            second_update_field(rec, obs)

    def test_nonconstant_temporal_rejected(self, rng):
        e, spec, _, obs = random_field_instance(rng, 6, 2, 3, 2)
        rec = first_update_field(e, spec)
        from dataclasses import replace
        with pytest.raises(InvalidInputError):
            second_update_field(replace(rec, var_temporal=np.eye(2)), obs)

    def test_conditioning_warning(self):
        g = Grid([0.0, 0.0], [0.0, 90.0])
        from coexproc.coex_field import FieldReconstruction
        rec = FieldReconstruction(np.zeros(2), np.ones((1, 1)), np.eye(2) * 1e8, ENSEMBLE_ADJUSTED)
        obs = make_observations([0.0, 0.0], [0.0, 0.0], [1.0, 1.1], [1e-6, 1e-6], g, ("Jan",))
        with pytest.warns(ConditioningWarning):
            second_update_field(rec, obs, cond_warn=1e6)
