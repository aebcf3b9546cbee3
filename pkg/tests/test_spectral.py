import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lqbundle.errors import (
    IndexOutOfRange,
    NegativeBeta,
    NegativeTime,
    NonPositiveEigenvalue,
    NotSorted,
    SingularShift,
)
from lqbundle.spectral import (
    eigenvalue_generator,
    fractional_inner_product,
    make_spectral_model,
    mode_projectors,
    resolvent_apply,
    semigroup_apply,
)


class TestMakeSpectralModel:
    def test_square_sequence(self):
        model = make_spectral_model([1, 4, 9, 16, 25])
        assert model.n == 5
        np.testing.assert_allclose(model.eigenvalues, [1, 4, 9, 16, 25])

    def test_single_mode(self):
        assert make_spectral_model([1]).n == 1

    def test_ordering_violation(self):
        with pytest.raises(NotSorted):
            make_spectral_model([4, 1])

    def test_nonpositive(self):
        with pytest.raises(NonPositiveEigenvalue):
            make_spectral_model([0.0, 1.0])

    def test_empty(self):
        with pytest.raises(NotSorted):
            make_spectral_model([])


class TestGenerators:
    def test_power(self):
        np.testing.assert_allclose(
            eigenvalue_generator("power", 5, p=2), [1, 4, 9, 16, 25]
        )

    def test_sum_of_squares_2d_against_enumeration(self):
        got = eigenvalue_generator("sum-of-squares-2d", 12)
        # brute-force oracle
        vals = sorted(
            m * m + l * l for m in range(30) for l in range(30) if m or l
        )
        np.testing.assert_allclose(got, vals[:12])
        assert got[0] == 1.0 and got[1] == 1.0 and got[2] == 2.0

    def test_unknown(self):
        with pytest.raises(IndexOutOfRange):
            eigenvalue_generator("cubes", 3)


class TestModeProjectors:
    def test_band_example_square(self):
        # gap (4, 9), k = 3: lower cut 1 (strict), upper cut 12 (strict)
        model = make_spectral_model([1, 4, 9, 16, 25])
        proj = mode_projectors(model, k=3, N=2)
        assert list(np.where(proj.low_mask)[0]) == []
        assert list(np.where(proj.mid_mask)[0]) == [0, 1, 2]
        assert list(np.where(proj.high_mask)[0]) == [3, 4]

    def test_band_example_small(self):
        model = make_spectral_model([1, 4, 9])
        proj = mode_projectors(model, k=1, N=2)
        assert list(np.where(proj.low_mask)[0]) == [0]
        assert list(np.where(proj.mid_mask)[0]) == [1, 2]
        assert list(np.where(proj.high_mask)[0]) == []

    def test_out_of_range(self):
        model = make_spectral_model([1, 4, 9])
        with pytest.raises(IndexOutOfRange):
            mode_projectors(model, k=1, N=3)
        with pytest.raises(IndexOutOfRange):
            mode_projectors(model, k=0, N=1)

    @settings(max_examples=25, deadline=None)
    @given(k=st.integers(min_value=1, max_value=30), n=st.integers(min_value=1, max_value=7))
    def test_partition_of_unity(self, k, n):
        model = make_spectral_model([float(j * j) for j in range(1, 9)])
        proj = mode_projectors(model, k=k, N=n)
        total = proj.P_low + proj.I_mid + proj.Q_high
        assert np.abs(total - np.eye(8)).max() <= 1e-12
        for p in (proj.P_low, proj.I_mid, proj.Q_high):
            assert np.abs(p @ p - p).max() <= 1e-12
            assert np.abs(p - p.T).max() <= 1e-12

    def test_high_band_spectral_bound(self, rng):
        model = make_spectral_model([float(j * j) for j in range(1, 11)])
        k, n_split = 3, 2
        proj = mode_projectors(model, k=k, N=n_split)
        a0 = model.operator()
        lam_n = model.eigenvalues[n_split - 1]
        for _ in range(50):
            v = proj.Q_high @ rng.standard_normal(model.n)
            quad = v @ a0 @ v
            assert quad >= (lam_n + k) * (v @ v) - 1e-12


class TestSemigroup:
    def test_identity_at_zero(self):
        np.testing.assert_allclose(semigroup_apply(np.diag([-2.0]), 0.0, [1.0]), [1.0])

    def test_analytic_value(self):
        np.testing.assert_allclose(
            semigroup_apply(np.diag([-1.0]), np.log(2.0), [1.0]), [0.5]
        )

    def test_two_modes(self):
        got = semigroup_apply(np.diag([-2.0, -3.0]), 1.0, [1.0, 1.0])
        np.testing.assert_allclose(got, [np.exp(-2), np.exp(-3)], rtol=1e-15)

    def test_negative_time(self):
        with pytest.raises(NegativeTime):
            semigroup_apply(np.diag([-1.0]), -0.1, [1.0])

    def test_homomorphism(self, rng):
        gen = -rng.uniform(0.5, 3.0, size=5)
        v = rng.standard_normal(5)
        for s, t in [(0.3, 1.1), (2.0, 0.01)]:
            lhs = semigroup_apply(gen, s + t, v)
            rhs = semigroup_apply(gen, s, semigroup_apply(gen, t, v))
            assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(lhs).max()


class TestResolvent:
    def test_scalar_inverse(self):
        np.testing.assert_allclose(resolvent_apply(np.diag([-2.0]), 0.0, [1.0]), [-0.5])

    def test_complex_shift(self):
        got = resolvent_apply(np.diag([-2.0]), 1j, [1.0])
        np.testing.assert_allclose(got, [(-2.0 + 1j) / 5.0], rtol=1e-15)

    def test_spectrum_hit(self):
        with pytest.raises(SingularShift):
            resolvent_apply(np.diag([-2.0]), -2.0, [1.0])

    def test_resolvent_identity(self, rng):
        a = rng.standard_normal((6, 6))
        z1, z2 = 0.7 + 2.3j, -1.1 + 0.4j
        for _ in range(5):
            v = rng.standard_normal(6)
            lhs = resolvent_apply(a, z1, v) - resolvent_apply(a, z2, v)
            rhs = (z1 - z2) * resolvent_apply(a, z1, resolvent_apply(a, z2, v))
            assert np.abs(lhs - rhs).max() <= 1e-10 * max(1.0, np.abs(lhs).max())


class TestFractionalScale:
    def test_beta_zero_is_euclidean(self, rng):
        model = make_spectral_model([1, 4, 9])
        v, w = rng.standard_normal(3), rng.standard_normal(3)
        assert fractional_inner_product(model, 0.0, v, w) == pytest.approx(v @ w)

    def test_half_power(self):
        model = make_spectral_model([1, 4])
        assert fractional_inner_product(model, 0.5, [1, 1], [1, 1]) == pytest.approx(5.0)

    def test_orthogonality_preserved(self):
        model = make_spectral_model([1, 4, 9])
        assert fractional_inner_product(model, 0.7, [1, 0, 0], [0, 1, 0]) == 0.0

    def test_negative_beta(self):
        model = make_spectral_model([1, 4])
        with pytest.raises(NegativeBeta):
            fractional_inner_product(model, -0.5, [1, 0], [1, 0])
