import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from conftest import random_spd
from mrcs.core import Dataset, InvalidInputError, PenaltySpec, UnsupportedRegimeError
from mrcs.lasso import (CdConfig, compute_adaptive_weights, fit_lasso, fit_ridge, kkt_residual,
                        ols, penalized_trace_objective, soft_threshold, solution_path,
                        solve_penalized_B)


def univariate():
    return Dataset.from_arrays(np.array([[1.0], [1.0]]), np.array([[2.0], [4.0]]), center=False)


def random_problem(rng, n=30, p=6, q=4, lam=0.1):
    X = rng.standard_normal((n, p))
    Y = X @ (rng.standard_normal((p, q)) * (rng.random((p, q)) < 0.5)) + rng.standard_normal((n, q))
    return Dataset.from_arrays(X, Y), random_spd(rng, q), PenaltySpec(lam)


def split_oracle(d, Omega, penalty):
    """Smooth bound-constrained reformulation B = U - V with U, V >= 0."""
    p, q = d.p, d.q
    X, Y, n = np.asarray(d.X), np.asarray(d.Y), d.n
    lamW = penalty.lam * penalty.weight_matrix(p, q)

    def f(z):
        U, V = z[:p * q].reshape(p, q), z[p * q:].reshape(p, q)
        B = U - V
        R = Y - X @ B
        G = -2.0 * X.T @ R @ Omega / n
        val = np.sum((R.T @ R) * Omega) / n + np.sum(lamW * (U + V))
        return val, np.concatenate([(G + lamW).ravel(), (-G + lamW).ravel()])

    res = minimize(f, np.zeros(2 * p * q), jac=True, method="L-BFGS-B",
                   bounds=[(0, None)] * (2 * p * q), options={"ftol": 1e-15, "gtol": 1e-12,
                                                            "maxiter": 20000})
    return res.fun


class TestSoftThreshold:
    @pytest.mark.parametrize("z,t,out", [(3, 1, 2), (-0.5, 1, 0), (-3, 1, -2), (1, 1, 0),
                                         (-1, 1, 0)])
    def test_values(self, z, t, out):
        assert soft_threshold(z, t) == out

    def test_negative_threshold(self):
        with pytest.raises(InvalidInputError):
            soft_threshold(1.0, -0.1)


class TestSolve:
    def test_univariate(self):
        d = univariate()
        sol = solve_penalized_B(d, np.eye(1), PenaltySpec(1.0))
        assert sol.converged
        assert sol.B[0, 0] == pytest.approx(2.5, abs=1e-12)
        assert kkt_residual(d, np.eye(1), PenaltySpec(1.0), np.array([[2.5]])) <= 1e-8
        assert solve_penalized_B(d, np.eye(1), PenaltySpec(10.0)).B[0, 0] == 0.0

    def test_least_squares_any_omega(self, rng):
        d, Om, _ = random_problem(rng)
        B_ls = np.linalg.solve(d.X.T @ d.X, d.X.T @ d.Y)
        for Omega in (Om, np.eye(d.q), random_spd(rng, d.q)):
            B = solve_penalized_B(d, Omega, PenaltySpec(0.0)).B
            np.testing.assert_allclose(B, B_ls, atol=1e-8)
        assert kkt_residual(d, Om, PenaltySpec(0.0), B_ls) <= 1e-8

    def test_matches_independent_optimizer(self, rng):
        for lam in (0.02, 0.2, 1.0):
            d, Om, pen = random_problem(rng, lam=lam)
            B = solve_penalized_B(d, Om, pen).B
            ours = penalized_trace_objective(d, Om, pen, B)
            assert ours <= split_oracle(d, Om, pen) + 1e-9

    def test_weights(self, rng):
        d, Om, _ = random_problem(rng)
        W = rng.uniform(0, 2, (d.p, d.q))
        W[0, 0] = 0.0
        pen = PenaltySpec(0.3, W)
        B = solve_penalized_B(d, Om, pen).B
        assert kkt_residual(d, Om, pen, B) <= 1e-8
        assert B[0, 0] != 0.0

    def test_rejects_bad_omega(self, rng):
        d, _, pen = random_problem(rng)
        with pytest.raises(InvalidInputError):
            solve_penalized_B(d, -np.eye(d.q), pen)
        A = np.eye(d.q)
        A[0, 1] = 0.5
        with pytest.raises(InvalidInputError):
            solve_penalized_B(d, A, pen)
        with pytest.raises(InvalidInputError):
            solve_penalized_B(d, np.eye(d.q + 1), pen)

    def test_rejects_bad_start(self, rng):
        d, Om, pen = random_problem(rng)
        with pytest.raises(InvalidInputError):
            solve_penalized_B(d, Om, pen, B0=np.full((d.p, d.q), np.nan))

    def test_sweep_cap_reports_nonconvergence(self, rng):
        d, Om, pen = random_problem(rng, lam=0.01)
        sol = solve_penalized_B(d, 10 * np.eye(d.q) + 9 * np.ones((d.q, d.q)), pen,
                                cfg=CdConfig(max_sweeps=1))
        assert not sol.converged
        assert sol.sweeps == 1

    def test_zero_variance_column(self, rng):
        X = rng.standard_normal((20, 3))
        X[:, 1] = 4.0
        d = Dataset.from_arrays(X, rng.standard_normal((20, 2)))
        B = solve_penalized_B(d, np.eye(2), PenaltySpec(0.01)).B
        assert np.all(B[1] == 0)

    def test_objective_monotone_over_sweeps(self, rng):
        d, Om, pen = random_problem(rng, lam=0.05)
        values = []
        solve_penalized_B(d, Om, pen, callback=lambda B: values.append(
            penalized_trace_objective(d, Om, pen, B)))
        assert len(values) > 1
        assert np.all(np.diff(values) <= 1e-12 * max(1.0, abs(values[0])))

    def test_warm_start_same_answer(self, rng):
        d, Om, pen = random_problem(rng)
        cold = solve_penalized_B(d, Om, pen).B
        warm = solve_penalized_B(d, Om, pen, B0=rng.standard_normal((d.p, d.q))).B
        np.testing.assert_allclose(cold, warm, atol=1e-7)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 12), st.integers(1, 12),
           st.floats(1e-3, 2.0))
    def test_kkt_random(self, seed, p, q, lam):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(p + 2, 60))
        d, Om, pen = random_problem(rng, n, p, q, lam)
        sol = solve_penalized_B(d, Om, pen)
        assert sol.converged
        assert kkt_residual(d, Om, pen, sol.B) <= 1e-6


class TestBaselines:
    def test_separate_equals_combined_shared_lambda(self, rng):
        d, _, _ = random_problem(rng)
        a = fit_lasso(d, 0.1, "combined").B
        b = fit_lasso(d, 0.1, "separate").B
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_separate_columns_independent(self, rng):
        d, _, _ = random_problem(rng)
        lams = np.array([0.01, 0.1, 0.5, 1.0])
        B = fit_lasso(d, lams, "separate").B
        for k, lam in enumerate(lams):
            np.testing.assert_allclose(B[:, k], fit_lasso(d, lam).B[:, k], atol=1e-9)

    def test_unknown_mode(self, rng):
        d, _, _ = random_problem(rng)
        with pytest.raises(InvalidInputError):
            fit_lasso(d, 0.1, "both")

    def test_ridge_scalar(self):
        assert fit_ridge(univariate(), 1.0)[0, 0] == pytest.approx(1.5)

    def test_ridge_limits(self, rng):
        d, _, _ = random_problem(rng)
        np.testing.assert_allclose(fit_ridge(d, 0.0), ols(d), atol=1e-10)
        assert np.max(np.abs(fit_ridge(d, 1e12))) < 1e-9

    def test_ridge_separate(self, rng):
        d, _, _ = random_problem(rng)
        lams = np.array([0.0, 0.1, 1.0, 10.0])
        B = fit_ridge(d, lams, "separate")
        for k, lam in enumerate(lams):
            np.testing.assert_allclose(B[:, k], fit_ridge(d, lam)[:, k], atol=1e-12)

    def test_ridge_singular(self, rng):
        d = Dataset.from_arrays(rng.standard_normal((4, 6)), rng.standard_normal((4, 2)))
        with pytest.raises(InvalidInputError):
            fit_ridge(d, 0.0)

    def test_path_descending_warm(self, rng):
        d, Om, _ = random_problem(rng)
        lams = [1.0, 0.1, 0.01]
        path = solution_path(d, Om, lams)
        for lam, B in zip(lams, path):
            assert kkt_residual(d, Om, PenaltySpec(lam), B) <= 1e-8


class TestAdaptiveWeights:
    def test_formula(self, rng):
        d, _, _ = random_problem(rng, n=40)
        W = compute_adaptive_weights(d, 2.0)
        B_ne = np.linalg.solve(d.X.T @ d.X, d.X.T @ d.Y)
        np.testing.assert_allclose(W, 1.0 / np.abs(B_ne) ** 2, rtol=1e-8)

    def test_ones_and_twos(self):
        X = np.array([[1.0, 0], [0, 1], [1, 1], [2, 1], [1, 3], [0, 2]])
        for scale, expected in ((1.0, 1.0), (2.0, 0.25)):
            Y = scale * X @ np.ones((2, 2))
            d = Dataset.from_arrays(X, Y, center=False)
            np.testing.assert_allclose(compute_adaptive_weights(d, 2.0), expected, rtol=1e-10)

    def test_zero_coefficient_capped(self):
        X = np.array([[1.0, 0], [0, 1], [1, 1], [2, 1], [1, 3], [0, 2]])
        Y = np.column_stack([X[:, 0], X[:, 0]])
        d = Dataset.from_arrays(X, Y, center=False)
        W = compute_adaptive_weights(d, 2.0)
        assert np.all(W[1] >= 1e11)
        assert np.all(W <= 1e12)

    def test_regime(self, rng):
        d = Dataset.from_arrays(rng.standard_normal((6, 3)), rng.standard_normal((6, 3)))
        with pytest.raises(UnsupportedRegimeError):
            compute_adaptive_weights(d, 2.0)
        d2 = Dataset.from_arrays(rng.standard_normal((30, 3)), rng.standard_normal((30, 3)))
        with pytest.raises(InvalidInputError):
            compute_adaptive_weights(d2, 1.0)
