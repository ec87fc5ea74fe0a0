import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrcs.core import (CsParams, Dataset, GenEqParams, InvalidInputError, PenaltySpec,
                       logdet_sigma, make_rng, neg_loglik, precision_dense, sigma_dense,
                       structured_trace, structured_trace_gen)

R22 = np.array([[1.0, 2.0], [3.0, 4.0]])


def dense_trace(R, Omega):
    return float(np.trace(R.T @ R @ Omega))


def gen_omega_by_hand(etas, theta):
    q = len(etas)
    C = (1 - theta) * np.eye(q) + theta * np.ones((q, q))
    S = np.diag(etas) @ C @ np.diag(etas)
    return np.linalg.inv(S)


class TestStructuredTrace:
    def test_identity(self):
        assert structured_trace(np.eye(2), CsParams(1.0, 0.0)) == pytest.approx(2.0)

    def test_half_correlation(self):
        assert structured_trace(R22, CsParams(1.0, 0.5)) == pytest.approx(64 / 3, rel=1e-12)
        Omega = np.array([[4 / 3, -2 / 3], [-2 / 3, 4 / 3]])
        assert dense_trace(R22, Omega) == pytest.approx(64 / 3, rel=1e-12)

    def test_diagonal_scale(self, rng):
        R = rng.standard_normal((7, 4))
        assert structured_trace(R, CsParams(2.5, 0.0)) == pytest.approx(np.sum(R ** 2) / 2.5)

    def test_gen_reduces_to_cs(self):
        assert structured_trace_gen(R22, GenEqParams([1, 1], 0.5)) == pytest.approx(64 / 3)

    def test_gen_column_scaling(self):
        assert structured_trace_gen(2 * np.eye(2), GenEqParams([2, 2], 0.0)) == pytest.approx(2.0)

    def test_gen_dense(self):
        Omega = gen_omega_by_hand([1.0, 2.0], 0.5)
        assert structured_trace_gen(R22, GenEqParams([1, 2], 0.5)) == pytest.approx(
            dense_trace(R22, Omega), rel=1e-12)

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            structured_trace(np.array([[1.0, np.nan]]), CsParams(1.0, 0.0))

    @given(st.integers(1, 20), st.integers(2, 20), st.floats(0.05, 5), st.floats(0, 0.99),
           st.integers(0, 2 ** 32 - 1))
    def test_matches_dense(self, n, q, eta2, theta, seed):
        R = np.random.default_rng(seed).standard_normal((n, q))
        p = CsParams(eta2, theta)
        dense = dense_trace(R, np.linalg.inv(sigma_dense(p, q)))
        assert structured_trace(R, p) == pytest.approx(dense, rel=1e-10, abs=1e-10)

    @given(st.integers(2, 15), st.integers(0, 2 ** 32 - 1), st.floats(0, 0.95))
    def test_gen_matches_dense_and_permutes(self, q, seed, theta):
        rng = np.random.default_rng(seed)
        R = rng.standard_normal((6, q))
        etas = rng.uniform(0.3, 3, q)
        val = structured_trace_gen(R, GenEqParams(etas, theta))
        assert val == pytest.approx(dense_trace(R, gen_omega_by_hand(etas, theta)), rel=1e-10)
        perm = rng.permutation(q)
        assert structured_trace_gen(R[:, perm], GenEqParams(etas[perm], theta)) == \
            pytest.approx(val, rel=1e-12)
        rows = rng.permutation(6)
        p = CsParams(1.3, theta)
        assert structured_trace(R[rows], p) == pytest.approx(structured_trace(R, p), rel=1e-12)


class TestLogdet:
    def test_identity(self):
        assert logdet_sigma(CsParams(1.0, 0.0), 7) == 0.0

    def test_two_by_two(self):
        p = CsParams(7.5, 14 / 15)
        expected = 2 * np.log(7.5) + np.log(1 / 15) + np.log(29 / 15)
        assert logdet_sigma(p, 2) == pytest.approx(expected, rel=1e-12)
        assert np.linalg.slogdet(sigma_dense(p, 2))[1] == pytest.approx(expected, rel=1e-12)

    def test_gen_diagonal(self):
        assert logdet_sigma(GenEqParams([1, 2], 0.0)) == pytest.approx(2 * np.log(2))

    def test_needs_q(self):
        with pytest.raises(InvalidInputError):
            logdet_sigma(CsParams(1.0, 0.2))

    @given(st.integers(2, 20), st.floats(0.1, 5), st.floats(0, 0.99))
    def test_matches_dense(self, q, eta2, theta):
        p = CsParams(eta2, theta)
        dense = -np.linalg.slogdet(precision_dense(p, q))[1]
        assert logdet_sigma(p, q) == pytest.approx(dense, abs=1e-9)


class TestPrecision:
    def test_identity(self):
        np.testing.assert_allclose(precision_dense(CsParams(1, 0), 3), np.eye(3))

    def test_half(self):
        np.testing.assert_allclose(precision_dense(CsParams(1, 0.5), 2),
                                   [[4 / 3, -2 / 3], [-2 / 3, 4 / 3]], atol=1e-14)

    def test_gen_diag(self):
        np.testing.assert_allclose(precision_dense(GenEqParams([1, 2], 0.0)),
                                   np.diag([1, 0.25]), atol=1e-15)

    @given(st.integers(1, 20), st.floats(0.01, 10), st.floats(0, 0.999))
    def test_spd_and_inverse(self, q, eta2, theta):
        p = CsParams(eta2, theta)
        Om = precision_dense(p, q)
        assert np.array_equal(Om, Om.T)
        assert np.linalg.eigvalsh(Om)[0] > 0
        np.testing.assert_allclose(Om @ sigma_dense(p, q), np.eye(q), atol=1e-6)


class TestNegLoglik:
    def test_zero(self):
        d = Dataset.from_arrays(np.zeros((3, 2)), np.zeros((3, 2)), center=False)
        assert neg_loglik(d, np.zeros((2, 2)), CsParams(1, 0)) == 0.0

    def test_dense_oracle(self, rng):
        X, Y = rng.standard_normal((9, 3)), rng.standard_normal((9, 4))
        B = rng.standard_normal((3, 4))
        d = Dataset.from_arrays(X, Y)
        p = CsParams(0.7, 0.4)
        Om = np.linalg.inv(sigma_dense(p, 4))
        R = d.Y - d.X @ B
        dense = np.trace(R.T @ R @ Om) / 9 - np.linalg.slogdet(Om)[1]
        assert neg_loglik(d, B, p) == pytest.approx(dense, abs=1e-10)

    def test_homogeneity(self, rng):
        Y = rng.standard_normal((5, 3))
        d1 = Dataset.from_arrays(np.zeros((5, 1)), Y, center=False)
        d3 = Dataset.from_arrays(np.zeros((5, 1)), 3 * Y, center=False)
        p = CsParams(1.1, 0.3)
        t1 = neg_loglik(d1, np.zeros((1, 3)), p) - logdet_sigma(p, 3)
        t3 = neg_loglik(d3, np.zeros((1, 3)), p) - logdet_sigma(p, 3)
        assert t3 == pytest.approx(9 * t1)

    def test_shape_mismatch(self, rng):
        d = Dataset.from_arrays(rng.standard_normal((4, 2)), rng.standard_normal((4, 3)))
        with pytest.raises(InvalidInputError):
            neg_loglik(d, np.zeros((3, 3)), CsParams(1, 0))


class TestTypes:
    @pytest.mark.parametrize("eta2,theta", [(0, 0.1), (-1, 0.1), (1, 1.0), (1, -0.1),
                                            (np.inf, 0.2)])
    def test_cs_invalid(self, eta2, theta):
        with pytest.raises(InvalidInputError):
            CsParams(eta2, theta)

    def test_gen_invalid(self):
        with pytest.raises(InvalidInputError):
            GenEqParams([1, 0], 0.1)
        with pytest.raises(InvalidInputError):
            GenEqParams([1, 1], 1.0)

    def test_gen_equality(self):
        assert GenEqParams([1, 2], 0.3) == GenEqParams(np.array([1.0, 2.0]), 0.3)
        assert GenEqParams([1, 2], 0.3) != GenEqParams([1, 2], 0.4)

    def test_penalty(self):
        with pytest.raises(InvalidInputError):
            PenaltySpec(-1.0)
        with pytest.raises(InvalidInputError):
            PenaltySpec(1.0, -np.ones((2, 2)))
        p = PenaltySpec(2.0, np.array([[1.0, 0.5]]))
        assert p.value(np.array([[1.0, -2.0]])) == pytest.approx(4.0)
        with pytest.raises(InvalidInputError):
            p.weight_matrix(2, 2)

    def test_dataset_centering(self, rng):
        X, Y = rng.standard_normal((6, 2)) + 3, rng.standard_normal((6, 3)) - 1
        d = Dataset.from_arrays(X, Y)
        np.testing.assert_allclose(d.x_means, X.mean(0))
        np.testing.assert_allclose(d.X.mean(0), 0, atol=1e-14)
        Xr, Yr = d.raw()
        np.testing.assert_allclose(Xr, X)
        np.testing.assert_allclose(Yr, Y)
        assert not d.X.flags.writeable
        B = rng.standard_normal((2, 3))
        np.testing.assert_allclose(d.intercept(B), Y.mean(0) - B.T @ X.mean(0))

    def test_dataset_subset_recenters(self, rng):
        X, Y = rng.standard_normal((8, 2)), rng.standard_normal((8, 2))
        s = Dataset.from_arrays(X, Y).subset([0, 2, 4])
        np.testing.assert_allclose(s.x_means, X[[0, 2, 4]].mean(0))

    @pytest.mark.parametrize("X,Y", [
        (np.zeros((3, 2)), np.zeros((4, 2))),
        (np.zeros((1, 2)), np.zeros((1, 2))),
        (np.array([[np.inf, 0], [0, 0]]), np.zeros((2, 1))),
    ])
    def test_dataset_invalid(self, X, Y):
        with pytest.raises(InvalidInputError):
            Dataset.from_arrays(X, Y)


def test_make_rng_streams():
    a = make_rng(5, "rep", 0, "B").standard_normal(4)
    b = make_rng(5, "rep", 0, "B").standard_normal(4)
    c = make_rng(5, "rep", 1, "B").standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
