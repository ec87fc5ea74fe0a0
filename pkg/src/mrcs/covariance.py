"""Covariance-block updates given a residual matrix.

Compound symmetry is solved in closed form through alpha = eta2 (1 - theta)
and gamma = eta2 (1 + (q - 1) theta), in which the objective separates.
General equicorrelation is updated cyclically: each marginal scale from the
positive root of its stationarity quadratic, then theta by line search.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from .core import (ONE_MINUS_THETA_FLOOR, THETA_MAX, CsParams, DegenerateResidualError, InvalidInputError,
                   _check_residuals, _one_minus)

ALPHA_FLOOR = 1e-10
GOLDEN = (sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ResidualSummary:
    """M1 = ||R||_F^2 / n and M2 = ||R 1||^2 / n."""

    M1: float
    M2: float
    n: int
    q: int

    @classmethod
    def from_residuals(cls, R) -> "ResidualSummary":
        R = _check_residuals(R)
        n, q = R.shape
        row_sums = R.sum(axis=1)
        return cls(float(np.sum(R * R)) / n, float(row_sums @ row_sums) / n, n, q)


def cs_from_alpha_gamma(alpha: float, gamma: float, q: int) -> tuple[float, float]:
    """Map (alpha, gamma) back to (eta2, theta)."""
    eta2 = alpha + (gamma - alpha) / q
    theta = (gamma - alpha) / (gamma + (q - 1) * alpha)
    return eta2, theta


def update_cs(R) -> CsParams:
    """Closed-form compound-symmetry update minimising the covariance block at fixed B."""
    R = _check_residuals(R)
    q = R.shape[1]
    if q < 2:
        raise InvalidInputError("compound symmetry needs at least two responses")
    s = ResidualSummary.from_residuals(R)
    if s.M1 == 0.0:
        raise DegenerateResidualError("residual matrix is identically zero")
    # In (alpha, gamma) the block is (M1 - M2/q)/alpha + (q-1) log alpha
    # + (M2/q)/gamma + log gamma, and theta >= 0 means gamma >= alpha.
    alpha = (q * s.M1 - s.M2) / (q * (q - 1))
    gamma = s.M2 / q
    if gamma < alpha:
        # constraint active: the optimum sits on gamma = alpha, i.e. theta = 0
        alpha = gamma = s.M1 / q
    alpha = max(alpha, ALPHA_FLOOR * max(s.M1, np.finfo(float).eps))
    gamma = max(alpha, gamma)
    eta2, theta = cs_from_alpha_gamma(alpha, gamma, q)
    return CsParams(eta2, min(max(theta, 0.0), THETA_MAX))


def eta_j_objective(R, etas, theta: float, j: int, eta_j: float) -> float:
    """Terms of the general-equicorrelation likelihood that depend on eta_j."""
    R = _check_residuals(R)
    n, q = R.shape
    e = np.array(etas, dtype=float)
    e[j] = eta_j
    omt = _one_minus(theta)
    col = R[:, j]
    row = (R / e).sum(axis=1)
    return (float(col @ col) / (n * omt * eta_j ** 2)
            - theta * float(row @ row) / (n * omt * (1 + (q - 1) * theta))
            + 2.0 * np.log(eta_j))


def update_eta_j(R, etas, theta: float, j: int) -> float:
    """Unique positive stationary point of the objective in eta_j (0-based ``j``)."""
    R = _check_residuals(R)
    n, q = R.shape
    if q < 2:
        raise InvalidInputError("equicorrelation needs at least two responses")
    if not (0.0 <= theta < 1.0):
        raise InvalidInputError("theta must lie in [0, 1)")
    etas = np.asarray(etas, dtype=float)
    col = R[:, j]
    ssq = float(col @ col)
    if ssq == 0.0:
        raise DegenerateResidualError(f"residual column {j} is identically zero")
    omt = _one_minus(theta)
    denom = 1.0 + (q - 1) * theta
    others = (R / etas).sum(axis=1) - col / etas[j]
    K1 = theta / (n * omt * denom) * float(col @ others)
    K2 = (1.0 + (q - 2) * theta) / (n * denom * omt) * ssq
    # Stable form of (-K1 + sqrt(K1^2 + 4 K2)) / 2.
    root = sqrt(K1 * K1 + 4.0 * K2)
    if K1 <= 0:
        return (-K1 + root) / 2.0
    return 2.0 * K2 / (K1 + root)


def theta_objective(R, etas):
    """Return f(theta), the theta-dependent part of the likelihood for fixed scales."""
    R = _check_residuals(R)
    n, q = R.shape
    Rs = R / np.asarray(etas, dtype=float)
    a = float(np.sum(Rs * Rs)) / n
    rs = Rs.sum(axis=1)
    b = float(rs @ rs) / n

    def f(theta):
        # accepts scalars or arrays of theta
        omt = np.maximum(1.0 - np.asarray(theta, dtype=float), ONE_MINUS_THETA_FLOOR)
        return (a / omt - theta * b / (omt * (omt + q * theta))
                + (q - 1) * np.log(omt) + np.log1p((q - 1) * theta))

    return f


def golden_section(f, lo: float, hi: float, tol: float = 1e-8, max_iter: int = 200):
    """Minimise a unimodal ``f`` on [lo, hi] to absolute tolerance ``tol``."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def update_theta_line_search(R, etas, grid_points: int = 101, tol: float = 1e-8) -> float:
    """Minimise the theta objective over [0, 1 - 1e-6].

    A coarse grid picks the bracket; golden-section refines inside it. The
    objective need not be unimodal on the whole interval, so the grid point
    and the bracket ends stay in the running.
    """
    f = theta_objective(R, etas)
    grid = np.linspace(0.0, THETA_MAX, grid_points)
    vals = f(grid)
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]
    t_gs, f_gs = golden_section(f, lo, hi, tol)
    candidates = [(vals[i], grid[i]), (f(lo), lo), (f(hi), hi), (f_gs, t_gs)]
    best = min(candidates, key=lambda c: c[0])
    return float(best[1])
