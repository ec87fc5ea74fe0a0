"""Blockwise coordinate descent fitters.

=========  ===========================================================
mrcs       alternate closed-form compound-symmetry and coefficient steps
ap-mrcs    one covariance step at the initial fit, then one B solve
mrgcs      alternate one eta/theta cycle and a coefficient step
ap-mrgcs   eta/theta cycles to convergence at the initial fit, one B solve
oracle     one B solve with a known precision matrix
=========  ===========================================================

Every fitter starts from a lasso fit tuned by cross-validation unless an
explicit ``B_init`` is given, so callers that fit many lambdas on the same
data should compute the initializer once with :func:`init_B`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (CovParams, CsParams, Dataset, FitResult, GenEqParams,
                   InvalidInputError, PenaltySpec, UnsupportedRegimeError,
                   neg_loglik, precision_dense, residuals)
from .covariance import theta_objective, update_cs, update_eta_j, update_theta_line_search
from .lasso import CdConfig, fit_lasso, solve_penalized_B
from .tuning import DEFAULT_GRID, kfold_indices, select_lasso_lambda

INITIALIZERS = ("combined-lasso", "separate-lasso", "zero")


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-7
    max_outer: int = 500
    inner_tol: float = 1e-8
    inner_max: int = 1000
    initializer: str = "combined-lasso"
    init_folds: int = 5
    init_grid: tuple = DEFAULT_GRID
    seed: int = 0
    cd: CdConfig = field(default_factory=CdConfig)

    def __post_init__(self):
        if not (self.epsilon > 0 and self.inner_tol > 0):
            raise InvalidInputError("tolerances must be positive")
        if self.max_outer < 1 or self.inner_max < 1:
            raise InvalidInputError("iteration caps must be positive")
        if self.initializer not in INITIALIZERS:
            raise InvalidInputError(
                f"initializer must be one of {INITIALIZERS}, got {self.initializer!r}")


def objective(dataset: Dataset, B, cov: CovParams, penalty: PenaltySpec) -> float:
    """Penalised negative log-likelihood (the quantity traced by the fitters)."""
    return neg_loglik(dataset, B, cov) + penalty.value(np.asarray(B))


def init_B(dataset: Dataset, K: int = 5, grid=DEFAULT_GRID, mode: str = "combined",
           seed: int = 0, cd: CdConfig | None = None) -> np.ndarray:
    """Lasso initializer with lambda chosen by K-fold prediction error.

    ``mode="combined"`` shares one lambda across responses; ``"separate"``
    picks one per response.
    """
    folds = kfold_indices(dataset.n, K, seed)
    lam = select_lasso_lambda(dataset, folds, grid, mode, cd)
    return fit_lasso(dataset, lam, mode, cfg=cd).B


def initial_B(dataset: Dataset, cfg: SolverConfig) -> np.ndarray:
    if cfg.initializer == "zero":
        return np.zeros((dataset.p, dataset.q))
    mode = "combined" if cfg.initializer == "combined-lasso" else "separate"
    return init_B(dataset, cfg.init_folds, cfg.init_grid, mode, cfg.seed, cfg.cd)


def _require_multiresponse(dataset: Dataset):
    if dataset.q < 2:
        raise InvalidInputError("equicorrelation fits need at least two responses")


def _require_low_dim(dataset: Dataset, method: str):
    if dataset.p >= dataset.n:
        raise UnsupportedRegimeError(
            f"{method} is not available when p >= n (p={dataset.p}, n={dataset.n}); "
            f"use ap-{method} instead")


def _start(dataset, cfg, B_init):
    if B_init is None:
        return initial_B(dataset, cfg)
    B = np.array(B_init, dtype=float)
    if B.shape != (dataset.p, dataset.q):
        raise InvalidInputError(f"B_init has shape {B.shape}, expected {(dataset.p, dataset.q)}")
    return B


def _stop_threshold(dataset: Dataset, cfg: SolverConfig) -> float:
    Y = np.asarray(dataset.Y)
    return cfg.epsilon * float(np.sum(Y * Y)) / dataset.n


def _alternate(dataset, lam, cfg, B, weights, cov, cov_step, method):
    penalty = PenaltySpec(lam, weights)
    threshold = _stop_threshold(dataset, cfg)
    F = objective(dataset, B, cov, penalty)
    trace = [F]
    converged = False
    it = 0
    for it in range(1, cfg.max_outer + 1):
        cov = cov_step(residuals(dataset, B), cov)
        B = solve_penalized_B(dataset, precision_dense(cov, dataset.q), penalty, B, cfg.cd).B
        F_new = objective(dataset, B, cov, penalty)
        trace.append(F_new)
        if abs(F_new - F) < threshold:
            converged = True
            break
        F = F_new
    return FitResult(B, dataset.intercept(B), cov, float(lam), np.array(trace), it,
                     converged, method)


def fit_mrcs(dataset: Dataset, lam: float, cfg: SolverConfig | None = None, *,
             B_init=None, weights=None) -> FitResult:
    """Compound-symmetry fit by blockwise coordinate descent."""
    cfg = cfg or SolverConfig()
    _require_multiresponse(dataset)
    _require_low_dim(dataset, "mrcs")
    B = _start(dataset, cfg, B_init)
    return _alternate(dataset, lam, cfg, B, weights, CsParams(1.0, 0.0),
                      lambda R, _: update_cs(R), "mrcs")


def fit_ap_mrcs(dataset: Dataset, lam: float, cfg: SolverConfig | None = None, *,
                B_init=None, weights=None) -> FitResult:
    """One covariance step at the initial fit, then a single coefficient solve."""
    cfg = cfg or SolverConfig()
    _require_multiresponse(dataset)
    B0 = _start(dataset, cfg, B_init)
    cov = update_cs(residuals(dataset, B0))
    return _single_solve(dataset, lam, cfg, B0, cov, weights, "ap-mrcs")


def _single_solve(dataset, lam, cfg, B0, cov, weights, method):
    penalty = PenaltySpec(lam, weights)
    sol = solve_penalized_B(dataset, precision_dense(cov, dataset.q), penalty, B0, cfg.cd)
    trace = np.array([objective(dataset, B0, cov, penalty),
                      objective(dataset, sol.B, cov, penalty)])
    return FitResult(sol.B, dataset.intercept(sol.B), cov, float(lam), trace, 1,
                     sol.converged, method)


def gen_cycle(R, cov: GenEqParams) -> GenEqParams:
    """One cyclic pass: each eta_j with the freshest neighbours, then theta."""
    etas = np.array(cov.etas, dtype=float)
    for j in range(etas.size):
        etas[j] = update_eta_j(R, etas, cov.theta, j)
    theta = update_theta_line_search(R, etas)
    f = theta_objective(R, etas)
    if f(cov.theta) < f(theta):
        theta = cov.theta
    return GenEqParams(etas, theta)


def fit_mrgcs(dataset: Dataset, lam: float, cfg: SolverConfig | None = None, *,
              B_init=None, weights=None) -> FitResult:
    """General-equicorrelation fit with single-cycle covariance steps."""
    cfg = cfg or SolverConfig()
    _require_multiresponse(dataset)
    _require_low_dim(dataset, "mrgcs")
    B = _start(dataset, cfg, B_init)
    return _alternate(dataset, lam, cfg, B, weights, GenEqParams(np.ones(dataset.q), 0.0),
                      gen_cycle, "mrgcs")


def gen_cov_converged(dataset: Dataset, B, cfg: SolverConfig,
                      cov: GenEqParams | None = None) -> tuple[GenEqParams, list[float]]:
    """Iterate eta/theta cycles at fixed B until the likelihood settles."""
    R = residuals(dataset, B)
    cov = cov or GenEqParams(np.ones(dataset.q), 0.0)
    F = neg_loglik(dataset, B, cov)
    history = [F]
    for _ in range(cfg.inner_max):
        cov = gen_cycle(R, cov)
        F_new = neg_loglik(dataset, B, cov)
        history.append(F_new)
        if abs(F_new - F) < cfg.inner_tol * max(1.0, abs(F)):
            break
        F = F_new
    return cov, history


def fit_ap_mrgcs(dataset: Dataset, lam: float, cfg: SolverConfig | None = None, *,
                 B_init=None, weights=None) -> FitResult:
    """Converged eta/theta at the initial fit, then a single coefficient solve."""
    cfg = cfg or SolverConfig()
    _require_multiresponse(dataset)
    B0 = _start(dataset, cfg, B_init)
    cov, _ = gen_cov_converged(dataset, B0, cfg)
    return _single_solve(dataset, lam, cfg, B0, cov, weights, "ap-mrgcs")


def fit_oracle(dataset: Dataset, lam: float, Omega_true, cd: CdConfig | None = None,
               B0=None) -> np.ndarray:
    """Coefficient fit with the true precision matrix plugged in."""
    return solve_penalized_B(dataset, Omega_true, PenaltySpec(lam), B0, cd).B


FITTERS = {
    "mrcs": fit_mrcs,
    "ap-mrcs": fit_ap_mrcs,
    "mrgcs": fit_mrgcs,
    "ap-mrgcs": fit_ap_mrgcs,
}
