"""Domain types and the structured-likelihood kernel.

Everything here works with the two equicorrelation families

    compound symmetry       Sigma = eta2 * ((1 - theta) I + theta 11')
    general equicorrelation Sigma = diag(etas) ((1 - theta) I + theta 11') diag(etas)

and evaluates traces and log-determinants in O(nq) without forming q x q
matrices. ``precision_dense`` is the one exception and exists for the
coefficient solver and for test oracles.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Union

import numpy as np

# 1 - theta is never allowed below this inside the kernels.
ONE_MINUS_THETA_FLOOR = 1e-6
THETA_MAX = 1.0 - ONE_MINUS_THETA_FLOOR


def make_rng(seed: int, *labels) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``seed`` and a label path.

    The 128-bit key is the BLAKE2b digest of ``"seed/label/label/..."``, so
    every (seed, labels) pair owns an independent, reproducible stream.
    """
    path = "/".join([str(int(seed))] + [str(x) for x in labels])
    key = int.from_bytes(hashlib.blake2b(path.encode(), digest_size=16).digest(), "little")
    return np.random.Generator(np.random.Philox(key=key))


class InvalidInputError(ValueError):
    """Raised for malformed, non-finite or dimensionally inconsistent input."""


class DegenerateResidualError(InvalidInputError):
    """Raised when residuals carry no information about the covariance."""


class UnsupportedRegimeError(InvalidInputError):
    """Raised when a method is asked to run outside its (n, p, q) regime."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def _check_theta(theta: float) -> None:
    if not (0.0 <= theta < 1.0):
        raise InvalidInputError(f"theta must lie in [0, 1), got {theta!r}")


@dataclass(frozen=True)
class CsParams:
    """Compound-symmetry covariance: common variance ``eta2``, correlation ``theta``."""

    eta2: float
    theta: float

    def __post_init__(self):
        if not (np.isfinite(self.eta2) and self.eta2 > 0):
            raise InvalidInputError(f"eta2 must be positive, got {self.eta2!r}")
        _check_theta(self.theta)


@dataclass(frozen=True)
class GenEqParams:
    """General equicorrelation: marginal standard deviations ``etas``, correlation ``theta``."""

    etas: np.ndarray
    theta: float

    def __post_init__(self):
        etas = _frozen(self.etas).reshape(-1)
        if etas.size == 0 or not np.all(np.isfinite(etas)) or np.any(etas <= 0):
            raise InvalidInputError("etas must be a non-empty vector of positive reals")
        object.__setattr__(self, "etas", etas)
        _check_theta(self.theta)

    def __eq__(self, other):
        if not isinstance(other, GenEqParams):
            return NotImplemented
        return self.theta == other.theta and np.array_equal(self.etas, other.etas)

    __hash__ = None


CovParams = Union[CsParams, GenEqParams]


@dataclass(frozen=True)
class PenaltySpec:
    """L1 penalty level ``lam`` with optional per-coefficient weights."""

    lam: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise InvalidInputError(f"lambda must be a nonnegative real, got {self.lam!r}")
        if self.weights is not None:
            w = _frozen(self.weights)
            if w.ndim != 2 or not np.all(np.isfinite(w)) or np.any(w < 0):
                raise InvalidInputError("weights must be a finite nonnegative p x q matrix")
            object.__setattr__(self, "weights", w)

    def weight_matrix(self, p: int, q: int) -> np.ndarray:
        if self.weights is None:
            return np.ones((p, q))
        if self.weights.shape != (p, q):
            raise InvalidInputError(
                f"weights have shape {self.weights.shape}, expected {(p, q)}")
        return np.asarray(self.weights)

    def value(self, B: np.ndarray) -> float:
        return float(self.lam * np.sum(self.weight_matrix(*B.shape) * np.abs(B)))


@dataclass(frozen=True)
class Dataset:
    """Predictors ``X`` (n x p) and responses ``Y`` (n x q).

    When ``centered`` is true the stored matrices are column-centred and
    ``x_means``/``y_means`` hold the column means of the raw inputs.
    """

    X: np.ndarray
    Y: np.ndarray
    x_means: np.ndarray
    y_means: np.ndarray
    centered: bool

    def __post_init__(self):
        X, Y = _frozen(self.X), _frozen(self.Y)
        if Y.ndim == 1:
            Y = _frozen(Y.reshape(-1, 1))
        if X.ndim != 2 or Y.ndim != 2:
            raise InvalidInputError("X and Y must be 2-D arrays")
        if X.shape[0] != Y.shape[0]:
            raise InvalidInputError(
                f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if X.shape[0] < 2:
            raise InvalidInputError("need at least two observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InvalidInputError("X and Y must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "x_means", _frozen(self.x_means).reshape(-1))
        object.__setattr__(self, "y_means", _frozen(self.y_means).reshape(-1))

    @classmethod
    def from_arrays(cls, X, Y, center: bool = True) -> "Dataset":
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y.reshape(-1, 1)
        if X.ndim != 2 or Y.ndim != 2:
            raise InvalidInputError("X and Y must be 2-D arrays")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InvalidInputError("X and Y must be finite")
        if center:
            xm, ym = X.mean(axis=0), Y.mean(axis=0)
            return cls(X - xm, Y - ym, xm, ym, True)
        return cls(X, Y, np.zeros(X.shape[1]), np.zeros(Y.shape[1]), False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Y.shape[1]

    def raw(self) -> tuple[np.ndarray, np.ndarray]:
        """Return the uncentred (X, Y)."""
        return np.asarray(self.X) + self.x_means, np.asarray(self.Y) + self.y_means

    def subset(self, rows) -> "Dataset":
        """Rows of the raw data, re-centred on their own means when this set is centred."""
        Xr, Yr = self.raw()
        return Dataset.from_arrays(Xr[rows], Yr[rows], center=self.centered)

    def transform(self, X, Y=None):
        """Centre new raw data with this dataset's training means."""
        Xc = np.asarray(X, dtype=float) - self.x_means
        if Y is None:
            return Xc
        return Xc, np.asarray(Y, dtype=float) - self.y_means

    def intercept(self, B: np.ndarray) -> np.ndarray:
        if not self.centered:
            return np.zeros(self.q)
        return self.y_means - B.T @ self.x_means


@dataclass
class FitResult:
    B: np.ndarray
    intercept: np.ndarray
    cov: CovParams | None
    lam: float
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    outer_iters: int = 0
    converged: bool = True
    method: str = ""

    def predict(self, X) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ self.B


def _one_minus(theta: float) -> float:
    return max(1.0 - theta, ONE_MINUS_THETA_FLOOR)


def _check_residuals(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.ndim == 1:
        R = R.reshape(-1, 1)
    if R.size == 0:
        raise InvalidInputError("residual matrix is empty")
    if not np.all(np.isfinite(R)):
        raise InvalidInputError("residual matrix has non-finite entries")
    return R


def _cs_quadratic(sum_sq: float, row_sum_sq: float, eta2: float, theta: float, q: int) -> float:
    omt = _one_minus(theta)
    return (sum_sq - theta * row_sum_sq / (omt + q * theta)) / (eta2 * omt)


def structured_trace(R, params: CsParams) -> float:
    """tr(R'R Omega) for a compound-symmetry precision, without the 1/n factor."""
    R = _check_residuals(R)
    q = R.shape[1]
    row_sums = R.sum(axis=1)
    return _cs_quadratic(float(np.sum(R * R)), float(row_sums @ row_sums),
                         params.eta2, params.theta, q)


def structured_trace_gen(R, params: GenEqParams) -> float:
    """tr(R'R Omega) for a general-equicorrelation precision, without the 1/n factor."""
    R = _check_residuals(R)
    if R.shape[1] != params.etas.size:
        raise InvalidInputError(
            f"residuals have {R.shape[1]} columns but etas has {params.etas.size}")
    Rs = R / params.etas
    row_sums = Rs.sum(axis=1)
    return _cs_quadratic(float(np.sum(Rs * Rs)), float(row_sums @ row_sums),
                         1.0, params.theta, R.shape[1])


def trace_term(R, params: CovParams) -> float:
    if isinstance(params, GenEqParams):
        return structured_trace_gen(R, params)
    return structured_trace(R, params)


def _logdet_correlation(theta: float, q: int) -> float:
    return (q - 1) * np.log(_one_minus(theta)) + np.log1p((q - 1) * theta)


def logdet_sigma(params: CovParams, q: int | None = None) -> float:
    """log det Sigma. ``q`` is required for compound symmetry."""
    if isinstance(params, GenEqParams):
        if q is not None and q != params.etas.size:
            raise InvalidInputError("q does not match len(etas)")
        q = params.etas.size
        return float(2.0 * np.sum(np.log(params.etas)) + _logdet_correlation(params.theta, q))
    if q is None or q < 1:
        raise InvalidInputError("q must be given for compound-symmetry parameters")
    return float(q * np.log(params.eta2) + _logdet_correlation(params.theta, q))


def precision_dense(params: CovParams, q: int | None = None) -> np.ndarray:
    """Dense q x q inverse covariance via the rank-one (Woodbury) form."""
    if isinstance(params, GenEqParams):
        q = params.etas.size
        inv_eta = 1.0 / params.etas
        scale = 1.0
    else:
        if q is None or q < 1:
            raise InvalidInputError("q must be given for compound-symmetry parameters")
        inv_eta = np.ones(q)
        scale = 1.0 / params.eta2
    theta = params.theta
    omt = _one_minus(theta)
    core = np.eye(q) - (theta / (omt + q * theta)) * np.ones((q, q))
    Omega = (scale / omt) * (inv_eta[:, None] * core * inv_eta[None, :])
    return 0.5 * (Omega + Omega.T)


def sigma_dense(params: CovParams, q: int | None = None) -> np.ndarray:
    """Dense q x q covariance matrix."""
    if isinstance(params, GenEqParams):
        etas = params.etas
        q = etas.size
    else:
        if q is None or q < 1:
            raise InvalidInputError("q must be given for compound-symmetry parameters")
        etas = np.full(q, np.sqrt(params.eta2))
    C = (1.0 - params.theta) * np.eye(q) + params.theta * np.ones((q, q))
    return etas[:, None] * C * etas[None, :]


def residuals(dataset: Dataset, B) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.shape != (dataset.p, dataset.q):
        raise InvalidInputError(
            f"B has shape {B.shape}, expected {(dataset.p, dataset.q)}")
    return np.asarray(dataset.Y) - np.asarray(dataset.X) @ B


def neg_loglik(dataset: Dataset, B, params: CovParams) -> float:
    """Gaussian negative log-likelihood tr[(1/n) R'R Omega] - log|Omega|."""
    R = residuals(dataset, B)
    return trace_term(R, params) / dataset.n + logdet_sigma(params, dataset.q)
