"""K-fold cross-validation over a lambda grid.

Equicorrelation methods are scored with the held-out Gaussian trace loss
(no log-determinant) under a one-step compound-symmetry precision estimated
on the training part of each fold. The lasso and ridge baselines are scored
by plain held-out squared prediction error.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import (CovParams, CsParams, Dataset, InvalidInputError, PenaltySpec,
                   make_rng, precision_dense, residuals, trace_term)
from .covariance import update_cs
from .lasso import CdConfig, fit_ridge, solution_path, solve_penalized_B

DEFAULT_GRID = tuple(10.0 ** (-4 + 0.5 * k) for k in range(14, -1, -1))
METHODS = ("mrcs", "ap-mrcs", "mrgcs", "ap-mrgcs", "oracle")
BASELINES = ("lasso-comb", "lasso-sep", "ridge-comb", "ridge-sep")


class InvalidPlanError(InvalidInputError):
    """Raised when a cross-validation plan cannot be carried out on the data."""


def _clean_grid(grid, allow_zero: bool = False) -> np.ndarray:
    g = np.unique(np.asarray(grid, dtype=float).reshape(-1))[::-1]
    if g.size == 0:
        raise InvalidPlanError("lambda grid is empty")
    if not np.all(np.isfinite(g)) or g[-1] < 0 or (g[-1] == 0 and not allow_zero):
        raise InvalidPlanError("lambda grid must hold finite positive values")
    return g.copy()


@dataclass(frozen=True)
class CvPlan:
    """Folds, descending de-duplicated grid and seed. Ties go to the larger lambda."""

    K: int = 5
    grid: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_GRID))
    seed: int = 0
    tie_rule: str = "largest-lambda"

    def __post_init__(self):
        if self.K < 2:
            raise InvalidPlanError("K must be at least 2")
        if self.tie_rule != "largest-lambda":
            raise InvalidPlanError(f"unsupported tie rule {self.tie_rule!r}")
        g = _clean_grid(self.grid)
        g.flags.writeable = False
        object.__setattr__(self, "grid", g)


class CvResult(NamedTuple):
    lam: float | np.ndarray
    table: np.ndarray


def kfold_indices(n: int, K: int, seed: int) -> list[np.ndarray]:
    """Seeded permutation of range(n) split into K near-equal blocks."""
    if K < 2:
        raise InvalidPlanError("K must be at least 2")
    perm = make_rng(seed, "folds", n, K).permutation(n)
    folds = np.array_split(perm, K)
    if min(len(f) for f in folds) < 2 or n - max(len(f) for f in folds) < 2:
        raise InvalidPlanError(f"{K} folds on {n} rows leave a fold with fewer than 2 rows")
    return folds


def validation_loss(Y_k, X_k, B, params: CovParams | np.ndarray) -> float:
    """tr[(1/m) R'R Omega] on a held-out fold of m rows.

    ``params`` is a structured covariance or a dense precision matrix.
    """
    Y_k = np.asarray(Y_k, dtype=float)
    X_k = np.asarray(X_k, dtype=float)
    B = np.asarray(B, dtype=float)
    if Y_k.ndim == 1:
        Y_k = Y_k.reshape(-1, 1)
    m = Y_k.shape[0]
    if m == 0:
        raise InvalidInputError("validation fold is empty")
    if X_k.shape[0] != m or X_k.shape[1] != B.shape[0] or B.shape[1] != Y_k.shape[1]:
        raise InvalidInputError(
            f"shape mismatch: X {X_k.shape}, B {B.shape}, Y {Y_k.shape}")
    R = Y_k - X_k @ B
    if isinstance(params, np.ndarray):
        if params.shape != (R.shape[1],) * 2:
            raise InvalidInputError("precision matrix does not match the response count")
        return float(np.sum((R.T @ R) * params)) / m
    return trace_term(R, params) / m


def _squared_errors(Y_k, X_k, path) -> np.ndarray:
    """(len(path), q) held-out squared error per lambda and response."""
    return np.array([np.sum((Y_k - X_k @ B) ** 2, axis=0) for B in path])


def _argmin_first(values) -> int:
    # grids are descending, so the first minimiser is the largest lambda
    return int(np.argmin(np.asarray(values)))


def select_lasso_lambda(dataset: Dataset, folds, grid, mode: str = "combined",
                        cd: CdConfig | None = None):
    """Lasso lambda (or per-response vector) minimising held-out squared error.

    The grid may contain 0. With an identity precision the columns decouple,
    so one warm-started path per fold serves both modes.
    """
    g = _clean_grid(grid, allow_zero=True)
    err = np.zeros((g.size, dataset.q))
    Xr, Yr = dataset.raw()
    for idx in folds:
        train = dataset.subset(np.setdiff1d(np.arange(dataset.n), idx))
        Xv, Yv = train.transform(Xr[idx], Yr[idx])
        err += _squared_errors(Yv, Xv, solution_path(train, np.eye(dataset.q), g, cfg=cd))
    if mode == "combined":
        return float(g[_argmin_first(err.sum(axis=1))])
    if mode == "separate":
        return np.array([g[_argmin_first(err[:, k])] for k in range(dataset.q)])
    raise InvalidInputError(f"unknown lasso mode {mode!r}")


@dataclass(frozen=True)
class FoldData:
    """Training set, centred validation block, initial fit and one-step covariance."""

    train: Dataset
    X_val: np.ndarray
    Y_val: np.ndarray
    B_init: np.ndarray
    cs: CsParams


def prepare_folds(dataset: Dataset, plan: CvPlan, cfg=None) -> list[FoldData]:
    """Per-fold quantities shared by every method cross-validated on ``dataset``."""
    from .solvers import SolverConfig, initial_B

    cfg = cfg or SolverConfig()
    Xr, Yr = dataset.raw()
    out = []
    for idx in kfold_indices(dataset.n, plan.K, plan.seed):
        train = dataset.subset(np.setdiff1d(np.arange(dataset.n), idx))
        Xv, Yv = train.transform(Xr[idx], Yr[idx])
        B0 = initial_B(train, cfg)
        out.append(FoldData(train, Xv, Yv, B0, update_cs(residuals(train, B0))))
    return out


def _fold_losses(fold: FoldData, method: str, grid, cfg, omega_true) -> np.ndarray:
    from .solvers import FITTERS, gen_cov_converged

    q = fold.train.q
    if method == "oracle":
        Omega = np.asarray(omega_true, dtype=float)
        path = solution_path(fold.train, Omega, grid, B0=fold.B_init, cfg=cfg.cd)
        return np.array([validation_loss(fold.Y_val, fold.X_val, B, Omega) for B in path])
    if method in ("ap-mrcs", "ap-mrgcs"):
        # the covariance step depends only on the initial fit, so it is shared
        # across the grid; each lambda is still solved from the initial fit
        if method == "ap-mrcs":
            cov = fold.cs
        else:
            cov, _ = gen_cov_converged(fold.train, fold.B_init, cfg)
        Omega = precision_dense(cov, q)
        Bs = [solve_penalized_B(fold.train, Omega, PenaltySpec(float(lam)), fold.B_init, cfg.cd).B
              for lam in grid]
    else:
        fit = FITTERS[method]
        Bs = [fit(fold.train, float(lam), cfg, B_init=fold.B_init).B for lam in grid]
    return np.array([validation_loss(fold.Y_val, fold.X_val, B, fold.cs) for B in Bs])


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def cross_validate(dataset: Dataset, method: str, plan: CvPlan | None = None, cfg=None,
                   omega_true=None, threads: int = 1,
                   folds: list[FoldData] | None = None) -> CvResult:
    """Select lambda for an equicorrelation method (or the oracle).

    Returns the selected lambda and a (len(grid), 2) table of
    [lambda, summed validation loss], grid in descending order. Passing
    ``folds`` from :func:`prepare_folds` reuses initial fits across methods.
    """
    from .solvers import SolverConfig

    if method not in METHODS:
        raise InvalidInputError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "oracle" and omega_true is None:
        raise InvalidInputError("the oracle needs the true precision matrix")
    plan = plan or CvPlan()
    cfg = cfg or SolverConfig()
    if folds is None:
        folds = prepare_folds(dataset, plan, cfg)
    grid = plan.grid
    losses = _map(lambda f: _fold_losses(f, method, grid, cfg, omega_true), folds, threads)
    total = np.sum(losses, axis=0)
    table = np.column_stack([grid, total])
    return CvResult(float(grid[_argmin_first(total)]), table)


def cv_baselines(dataset: Dataset, method: str, plan: CvPlan | None = None,
                 cd: CdConfig | None = None) -> CvResult:
    """Held-out squared-error selection for the lasso and ridge baselines.

    Combined modes return a scalar lambda and a [lambda, loss] table;
    separate modes return one lambda per response and a table with a loss
    column per response.
    """
    if method not in BASELINES:
        raise InvalidInputError(f"unknown baseline {method!r}; expected one of {BASELINES}")
    plan = plan or CvPlan()
    grid = plan.grid
    family, mode = method.split("-")
    err = np.zeros((grid.size, dataset.q))
    Xr, Yr = dataset.raw()
    for idx in kfold_indices(dataset.n, plan.K, plan.seed):
        train = dataset.subset(np.setdiff1d(np.arange(dataset.n), idx))
        Xv, Yv = train.transform(Xr[idx], Yr[idx])
        if family == "lasso":
            path = solution_path(train, np.eye(dataset.q), grid, cfg=cd)
        else:
            path = [fit_ridge(train, lam) for lam in grid]
        err += _squared_errors(Yv, Xv, path)
    if mode == "comb":
        total = err.sum(axis=1)
        return CvResult(float(grid[_argmin_first(total)]), np.column_stack([grid, total]))
    lams = np.array([grid[_argmin_first(err[:, k])] for k in range(dataset.q)])
    return CvResult(lams, np.column_stack([grid, err]))
