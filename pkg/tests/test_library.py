"""Candidate library: Chebyshev terms, scaling, canonical enumeration."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aesibatt.errors import ConfigError, NumericError
from aesibatt.library import (CHANNELS, DEFAULT_EXTRAS, FULL_EXTRAS,
                              LibrarySpec, PHI_FUNCS, ScalingParams,
                              TermDescriptor, build_theta, chebyshev,
                              enumerate_candidates, paper_sized_pool)


class TestChebyshev:
    @given(st.integers(0, 10),
           st.floats(-2.0, 2.0, allow_nan=False, allow_infinity=False))
    @settings(max_examples=200, deadline=None)
    def test_matches_numpy_chebyshev(self, n, x):
        coeffs = np.zeros(n + 1)
        coeffs[n] = 1.0
        expected = np.polynomial.chebyshev.chebval(x, coeffs)
        assert abs(float(chebyshev(n, x)) - expected) < 1e-10 * max(1, abs(expected))

    @given(st.integers(1, 9),
           st.floats(-1.0, 1.0, allow_nan=False))
    @settings(max_examples=100, deadline=None)
    def test_three_term_recurrence_identity(self, n, x):
        lhs = float(chebyshev(n + 1, x))
        rhs = 2 * x * float(chebyshev(n, x)) - float(chebyshev(n - 1, x))
        assert abs(lhs - rhs) < 1e-10

    def test_known_values(self):
        np.testing.assert_allclose(chebyshev(0, 0.3), 1.0)
        np.testing.assert_allclose(chebyshev(1, 0.3), 0.3)
        np.testing.assert_allclose(chebyshev(2, 0.5), 2 * 0.25 - 1)

    def test_negative_order_rejected(self):
        with pytest.raises(ConfigError):
            chebyshev(-1, 0.5)


class TestScaling:
    def test_fit_maps_training_range_to_unit_interval(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(100, 6)) * np.arange(1, 7)
        s = ScalingParams.fit(X)
        Xs = s.apply(X)
        np.testing.assert_allclose(Xs.min(axis=0), -1.0)
        np.testing.assert_allclose(Xs.max(axis=0), 1.0)

    @given(st.floats(-50, 50, allow_nan=False))
    @settings(max_examples=100, deadline=None)
    def test_roundtrip_identity(self, v):
        s = ScalingParams(mins=(-3.0,) * 6, maxs=(5.0,) * 6)
        assert abs(float(s.invert_channel(s.apply_channel(v, 2), 2)) - v) < 1e-12 * max(1, abs(v))

    def test_matrix_roundtrip(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(-4, 9, (50, 6))
        s = ScalingParams.fit(X)
        np.testing.assert_allclose(s.invert(s.apply(X)), X, atol=1e-12)

    def test_degenerate_channel_rejected(self):
        with pytest.raises(ConfigError, match="degenerate"):
            ScalingParams(mins=(0.0,) * 6, maxs=(0.0,) + (1.0,) * 5)

    def test_dict_roundtrip(self):
        s = ScalingParams(mins=(-1, 0, 1, 2, 3, 4), maxs=(0, 1, 2, 3, 4, 5))
        assert ScalingParams.from_dict(s.to_dict()) == s


class TestEnumeration:
    def test_polynomial_pool_has_22_terms(self, small_spec):
        # 1 constant + 6 univariate (order 1) + C(6,2)=15 bilinear cross terms
        assert len(small_spec) == 22

    def test_default_extras_add_one_per_function_and_channel(self):
        spec = enumerate_candidates(2, 1)
        assert len(spec) == 22 + len(DEFAULT_EXTRAS) * 6

    def test_paper_sized_pool_has_626_terms(self):
        assert len(paper_sized_pool()) == 626

    def test_names_unique_across_pools(self):
        for spec in (enumerate_candidates(3, 2), paper_sized_pool()):
            assert len(set(spec.names)) == len(spec)

    def test_canonical_order_constant_then_error_state(self, small_spec):
        assert small_spec.terms[0].kind == "constant"
        assert small_spec.names[1] == "T1(e)"
        assert small_spec.names[2] == "T1(I)"

    def test_cross_terms_respect_degree_budget(self):
        spec = enumerate_candidates(3, 2, extras=())
        for term in spec.terms:
            if term.kind == "cross":
                nz = sum(1 for v in term.degrees if v > 0)
                assert 2 <= nz <= 3
                assert term.total_degree <= 3
                assert max(term.degrees) <= 2

    def test_enumeration_is_deterministic(self):
        a = enumerate_candidates(3, 2, FULL_EXTRAS, 2)
        b = enumerate_candidates(3, 2, FULL_EXTRAS, 2)
        assert a.names == b.names

    def test_bad_degree_rejected(self):
        with pytest.raises(ConfigError):
            enumerate_candidates(0, 1)
        with pytest.raises(ConfigError):
            enumerate_candidates(2, (1, 1))
        with pytest.raises(ConfigError):
            enumerate_candidates(2, 1, extras=("nope",))

    def test_json_roundtrip(self):
        spec = enumerate_candidates(2, 2, ("sin", "tanh"), 2)
        back = LibrarySpec.from_json(spec.to_json())
        assert back.names == spec.names
        assert back.d == spec.d and back.p_c == spec.p_c

    def test_duplicate_names_rejected(self):
        t = TermDescriptor("constant", name="1")
        with pytest.raises(ConfigError):
            LibrarySpec((t, t), 1, (1,) * 6, ())


class TestBuildTheta:
    def test_matches_manual_term_evaluation(self, small_spec):
        rng = np.random.default_rng(3)
        X = rng.uniform(-1, 1, (40, 6))
        theta = build_theta(X, small_spec)
        assert theta.shape == (40, 22)
        names = small_spec.names
        np.testing.assert_allclose(theta[:, 0], 1.0)
        np.testing.assert_allclose(theta[:, names.index("T1(I)")], X[:, 1])
        j = names.index("T1(e)*T1(cs_p)")
        np.testing.assert_allclose(theta[:, j], X[:, 0] * X[:, 2])

    def test_phi_terms_apply_function_to_channel_product(self):
        spec = enumerate_candidates(2, 1, ("tanh",), 2)
        rng = np.random.default_rng(4)
        X = rng.uniform(-1, 1, (30, 6))
        theta = build_theta(X, spec)
        names = spec.names
        np.testing.assert_allclose(
            theta[:, names.index("tanh(e)")], np.tanh(X[:, 0]))
        np.testing.assert_allclose(
            theta[:, names.index("tanh(e*I)")], np.tanh(X[:, 0] * X[:, 1]))

    def test_sin_cos_use_pi_scaled_argument(self):
        spec = enumerate_candidates(1, 1, ("sin", "cos"))
        X = np.full((5, 6), 0.5)
        theta = build_theta(X, spec)
        names = spec.names
        np.testing.assert_allclose(theta[:, names.index("sin(I)")],
                                   np.sin(np.pi * 0.5))
        np.testing.assert_allclose(theta[:, names.index("cos(I)")],
                                   np.cos(np.pi * 0.5), atol=1e-15)

    def test_column_subset_preserves_order(self, small_spec):
        rng = np.random.default_rng(5)
        X = rng.uniform(-1, 1, (20, 6))
        full = build_theta(X, small_spec)
        sub = build_theta(X, small_spec, columns=[3, 7, 11])
        np.testing.assert_array_equal(sub, full[:, [3, 7, 11]])

    def test_wrong_channel_count_rejected(self, small_spec):
        with pytest.raises(ConfigError):
            build_theta(np.zeros((5, 4)), small_spec)

    def test_nonfinite_term_value_named(self):
        spec = enumerate_candidates(1, 1, ("cosh",))
        X = np.zeros((3, 6))
        X[1, 1] = 1e6  # cosh overflows
        with pytest.raises(NumericError, match=r"cosh\(I\).*row 1"):
            with np.errstate(over="ignore"):
                build_theta(X, spec)

    def test_sech_is_reciprocal_cosh(self):
        x = np.linspace(-2, 2, 11)
        np.testing.assert_allclose(PHI_FUNCS["sech"](x), 1.0 / np.cosh(x))
