"""Moving block bootstrap, OOB selection, bagging, stability selection."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aesibatt.ensemble import (EnsembleConfig, EnsembleModel, bag,
                               build_ensemble_model, expected_unique_coverage,
                               fit_ensemble, inclusion_probabilities,
                               mbb_resample, stability_select)
from aesibatt.errors import ConfigError
from tests.conftest import planted_problem


class TestMBBResample:
    def test_sample_length_and_bounds(self):
        rng = np.random.default_rng(0)
        s = mbb_resample(1000, 50, rng)
        assert s.indices.shape == (1000,)
        assert s.indices.min() >= 0 and s.indices.max() < 1000

    def test_blocks_are_contiguous_runs(self):
        rng = np.random.default_rng(1)
        B = 25
        s = mbb_resample(500, B, rng)
        blocks = s.indices.reshape(-1, B)
        for block in blocks:
            np.testing.assert_array_equal(np.diff(block), 1)

    def test_truncation_when_blocks_overshoot(self):
        rng = np.random.default_rng(2)
        s = mbb_resample(103, 10, rng)   # ceil(103/10)=11 blocks -> 110, cut to 103
        assert s.indices.shape == (103,)

    def test_oob_complements_in_bag(self):
        rng = np.random.default_rng(3)
        s = mbb_resample(200, 20, rng)
        in_bag = set(s.indices.tolist())
        oob = set(s.oob_indices.tolist())
        assert in_bag.isdisjoint(oob)
        assert in_bag | oob == set(range(200))

    def test_block_size_bounds(self):
        with pytest.raises(ConfigError):
            mbb_resample(10, 0, 0)
        with pytest.raises(ConfigError):
            mbb_resample(10, 11, 0)

    def test_full_block_covers_everything(self):
        s = mbb_resample(100, 100, np.random.default_rng(4))
        assert s.unique_coverage == 1.0
        assert s.oob_indices.size == 0


class TestExpectedCoverage:
    def test_closed_form_value(self):
        # 1 - (1 - 1/n)^(n/B) evaluated by hand for small numbers
        assert expected_unique_coverage(100, 10) == pytest.approx(
            1.0 - (1.0 - 0.01) ** 10.0)

    def test_single_row_block_limit_is_one_minus_inv_e(self):
        val = expected_unique_coverage(10**5, 1)
        assert val == pytest.approx(1.0 - np.exp(-1.0), abs=5e-6)
        assert abs(val - 0.632) < 0.005

    def test_monte_carlo_agrees_at_unit_block(self):
        rng = np.random.default_rng(5)
        cov = [mbb_resample(20000, 1, rng).unique_coverage for _ in range(30)]
        assert np.mean(cov) == pytest.approx(expected_unique_coverage(20000, 1),
                                             abs=0.003)

    def test_bounds_checked(self):
        with pytest.raises(ConfigError):
            expected_unique_coverage(10, 0)


class TestBagging:
    def test_mean_is_exact(self):
        xis = [np.array([1.0, 0.0, 3.0]), np.array([3.0, 2.0, 1.0])]
        np.testing.assert_array_equal(bag(xis), np.array([2.0, 1.0, 2.0]))

    @given(st.integers(2, 8), st.integers(1, 6))
    @settings(max_examples=50, deadline=None)
    def test_linearity_identity(self, k, m):
        """bag(a*x + b*y) = a*bag(x) + b*bag(y), exactly in floating point
        when a and b are powers of two."""
        rng = np.random.default_rng(k * 100 + m)
        xs = [rng.normal(size=m) for _ in range(k)]
        ys = [rng.normal(size=m) for _ in range(k)]
        a, b = 2.0, 0.5
        lhs = bag([a * x + b * y for x, y in zip(xs, ys)])
        rhs = a * bag(xs) + b * bag(ys)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)

    def test_mismatched_libraries_rejected(self):
        with pytest.raises(ConfigError):
            bag([np.zeros(3), np.zeros(4)])
        with pytest.raises(ConfigError):
            bag([])


class TestFitEnsemble:
    def test_keeps_top_fraction_by_oob(self, small_spec):
        _, theta, y, _ = planted_problem(small_spec, 0, n=1500)
        cfg = EnsembleConfig(n_boot=30, top_fraction=0.2, block_size=100)
        members = fit_ensemble(theta, y, 1e-6, 0.1, cfg, seed=0)
        assert len(members) == 6          # ceil(0.2 * 30)
        assert members == sorted(members, key=lambda m: (m.oob_mse, m.index))

    def test_deterministic_for_fixed_seed(self, small_spec):
        _, theta, y, _ = planted_problem(small_spec, 1, n=800)
        cfg = EnsembleConfig(n_boot=15, block_size=80)
        a = fit_ensemble(theta, y, 1e-6, 0.1, cfg, seed=3)
        b = fit_ensemble(theta, y, 1e-6, 0.1, cfg, seed=3)
        for ma, mb in zip(a, b):
            np.testing.assert_array_equal(ma.xi, mb.xi)

    def test_empty_oob_members_warned_and_excluded(self):
        rng = np.random.default_rng(2)
        theta = rng.normal(size=(40, 3))
        y = rng.normal(size=40)
        cfg = EnsembleConfig(n_boot=10, block_size=40)   # every sample is full
        with pytest.warns(UserWarning, match="empty OOB"):
            members = fit_ensemble(theta, y, 1e-6, 0.01, cfg, seed=0)
        assert members == []

    def test_config_validation(self, small_spec):
        _, theta, y, _ = planted_problem(small_spec, 0, n=200)
        with pytest.raises(ConfigError):
            fit_ensemble(theta, y, 1e-6, 0.1, EnsembleConfig(n_boot=5), 0)
        with pytest.raises(ConfigError):
            fit_ensemble(theta, y, 1e-6, 0.1,
                         EnsembleConfig(top_fraction=0.0), 0)


class TestStabilitySelection:
    def _member_xis(self):
        # 4 members over 5 terms with inclusion pattern 1.0/0.75/0.5/0.25/0
        base = np.array([
            [1.0, 1.0, 1.0, 1.0, 0.0],
            [1.0, 1.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0, 0.0],
        ])
        return [row for row in base]

    def test_inclusion_probabilities(self):
        pi = inclusion_probabilities(self._member_xis())
        np.testing.assert_allclose(pi, [1.0, 0.75, 0.5, 0.25, 0.0])

    def test_support_shrinks_monotonically_in_tau(self):
        xis = self._member_xis()
        rng = np.random.default_rng(0)
        theta = rng.normal(size=(100, 5))
        y = theta @ np.array([1.0, 0.5, 0.3, 0.2, 0.0]) + rng.normal(0, 0.01, 100)
        prev = None
        for tau in (0.2, 0.4, 0.6, 0.8, 0.99):
            xi, pi = stability_select(xis, tau, theta, y, 1e-8, 1e-4)
            support = set(np.flatnonzero(pi > tau).tolist())
            if prev is not None:
                assert support <= prev
            prev = support

    def test_refit_is_stridge_on_retained_columns(self):
        xis = self._member_xis()
        rng = np.random.default_rng(1)
        theta = rng.normal(size=(200, 5))
        y = theta @ np.array([1.0, 0.5, 0.0, 0.0, 0.0]) + rng.normal(0, 0.05, 200)
        lam1 = 0.2
        xi, pi = stability_select(xis, 0.6, theta, y, lam1, 1e-4)
        keep = np.flatnonzero(pi > 0.6)
        sub = theta[:, keep]
        expected = np.linalg.solve(sub.T @ sub + lam1 * np.eye(keep.size),
                                   sub.T @ y)
        np.testing.assert_allclose(xi[keep], expected, rtol=1e-10)
        assert np.all(xi[np.setdiff1d(np.arange(5), keep)] == 0)

    def test_no_term_passing_threshold_warns_empty(self):
        xis = [np.zeros(4) for _ in range(3)]
        with pytest.warns(UserWarning, match="empty model"):
            xi, pi = stability_select(xis, 0.5, np.eye(4), np.ones(4), 1e-6, 0.1)
        np.testing.assert_array_equal(xi, 0.0)

    def test_tau_bounds(self):
        with pytest.raises(ConfigError):
            stability_select([np.ones(2)], 1.0, np.eye(2), np.ones(2), 0.1, 0.1)


class TestEnsembleModel:
    def test_build_and_json_roundtrip(self, small_spec, unit_scaling):
        _, theta, y, xi_true = planted_problem(small_spec, 0, n=1200)
        cfg = EnsembleConfig(n_boot=20, block_size=100)
        model = build_ensemble_model(theta, y, small_spec, unit_scaling,
                                     1e-6, 0.1, "bagging", cfg, seed=0)
        assert model.method == "bagging"
        assert set(np.flatnonzero(model.xi_ens)) == set(np.flatnonzero(xi_true))
        back = EnsembleModel.from_json(model.to_json())
        np.testing.assert_array_equal(back.xi_ens, model.xi_ens)
        assert back.spec.names == model.spec.names
        assert len(back.members) == len(model.members)

    def test_stability_requires_tau(self, small_spec, unit_scaling):
        _, theta, y, _ = planted_problem(small_spec, 0, n=500)
        cfg = EnsembleConfig(n_boot=15, block_size=50)
        with pytest.raises(ConfigError, match="tau"):
            build_ensemble_model(theta, y, small_spec, unit_scaling,
                                 1e-6, 0.1, "stability", cfg, seed=0)

    def test_unknown_method_rejected(self, small_spec, unit_scaling):
        with pytest.raises(ConfigError):
            build_ensemble_model(np.eye(22), np.ones(22), small_spec,
                                 unit_scaling, 1e-6, 0.1, "voting",
                                 EnsembleConfig(), 0)

    def test_predict_error_matches_library_product(self, small_spec,
                                                   unit_scaling):
        _, theta, y, _ = planted_problem(small_spec, 2, n=900)
        cfg = EnsembleConfig(n_boot=15, block_size=90)
        model = build_ensemble_model(theta, y, small_spec, unit_scaling,
                                     1e-6, 0.1, "bagging", cfg, seed=1)
        rng = np.random.default_rng(5)
        X = rng.uniform(-1, 1, (25, 6))
        from aesibatt.library import build_theta
        np.testing.assert_allclose(model.predict_error(X),
                                   build_theta(X, small_spec) @ model.xi_ens,
                                   atol=1e-14)
