"""Coordinate descent for the coefficient block with a fixed precision matrix.

Solves

    min_B  tr[(1/n)(Y - XB)'(Y - XB) Omega] + lam * sum_jk w_jk |B_jk|

by cyclic coordinate descent. Coordinate (j, k) uses the curvature
H_jk = (X'X)_jj Omega_kk / n and the gradient component
G_jk = [X'(Y - XB) Omega]_jk / n, so the update is

    B_jk <- soft_threshold(B_jk + G_jk / H_jk, lam w_jk / (2 H_jk)).

With dense, strongly correlated Omega the problem is badly conditioned and
plain sweeps crawl. Whenever the sign pattern survives a sweep we take a
step toward the exact minimiser restricted to the current support (the
Hessian is X'X kron Omega, so the restricted system is cheap either directly
or through its complement) and keep it only if the objective drops.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numba
import numpy as np
import scipy.linalg as sla

from .core import Dataset, InvalidInputError, PenaltySpec, UnsupportedRegimeError

WEIGHT_CAP = 1e12


@dataclass(frozen=True)
class CdConfig:
    tol: float = 1e-7
    max_sweeps: int = 10000
    active_set: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidInputError("tol must be positive")
        if self.max_sweeps < 1:
            raise InvalidInputError("max_sweeps must be at least 1")


class CdSolution(NamedTuple):
    B: np.ndarray
    converged: bool
    sweeps: int


def soft_threshold(z: float, t: float) -> float:
    """sign(z) * max(|z| - t, 0); |z| == t maps to 0."""
    if t < 0:
        raise InvalidInputError("threshold must be nonnegative")
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@numba.njit(cache=True, nogil=True)
def _sweep(XtX, A, Omega, lamW, B, P, n, active_only):
    # P caches B @ Omega; A is X'Y @ Omega.
    p, q = B.shape
    maxd = 0.0
    maxb = 0.0
    changed = False
    for j in range(p):
        xjj = XtX[j, j]
        for k in range(q):
            old = B[j, k]
            if active_only and old == 0.0:
                continue
            H = xjj * Omega[k, k] / n
            g = A[j, k]
            for l in range(p):
                g -= XtX[j, l] * P[l, k]
            g /= n
            z = old + g / H
            t = lamW[j, k] / (2.0 * H)
            if z > t:
                new = z - t
            elif z < -t:
                new = z + t
            else:
                new = 0.0
            d = new - old
            if d != 0.0:
                if (new > 0.0) != (old > 0.0) or (new < 0.0) != (old < 0.0):
                    changed = True
                B[j, k] = new
                for m in range(q):
                    P[j, m] += d * Omega[k, m]
                if abs(d) > maxd:
                    maxd = abs(d)
            if abs(new) > maxb:
                maxb = abs(new)
    return maxd, maxb, changed


def _cho_inverse(M):
    try:
        c = sla.cho_factor(M)
    except np.linalg.LinAlgError:
        return None
    return sla.cho_solve(c, np.eye(M.shape[0]))


class _Problem:
    """Sufficient statistics of one coefficient subproblem on the usable predictors."""

    def __init__(self, XtX, XtY, n, Omega, lamW):
        self.XtX = np.ascontiguousarray(XtX)
        self.Omega = np.ascontiguousarray(Omega)
        self.A = np.ascontiguousarray(XtY @ Omega)
        self.lamW = np.ascontiguousarray(lamW)
        self.n = float(n)
        self._inverses = None

    def smooth(self, B, P):
        return (np.sum(B * (self.XtX @ P)) - 2.0 * np.sum(B * self.A)) / self.n

    def objective(self, B, P=None):
        if P is None:
            P = B @ self.Omega
        return self.smooth(B, P) + float(np.sum(self.lamW * np.abs(B)))

    def inverses(self):
        if self._inverses is None:
            self._inverses = (_cho_inverse(self.XtX), _cho_inverse(self.Omega))
        return self._inverses

    def restricted_optimum(self, B):
        """Minimiser of the smooth part plus the linearised penalty on supp(B)."""
        nz = B != 0.0
        R = self.A - 0.5 * self.n * self.lamW * np.sign(B)
        n_nz = int(nz.sum())
        XtX_inv, Omega_inv = self.inverses()
        if XtX_inv is None or n_nz <= B.size - n_nz:
            js, ks = np.nonzero(nz)
            K = self.XtX[np.ix_(js, js)] * self.Omega[np.ix_(ks, ks)]
            out = np.zeros_like(B)
            out[js, ks] = sla.cho_solve(sla.cho_factor(K), R[js, ks])
            return out
        full = XtX_inv @ R @ Omega_inv
        jz, kz = np.nonzero(~nz)
        if jz.size:
            G = XtX_inv[np.ix_(jz, jz)] * Omega_inv[np.ix_(kz, kz)]
            mu = np.zeros_like(B)
            mu[jz, kz] = sla.cho_solve(sla.cho_factor(G), full[jz, kz])
            full = full - XtX_inv @ mu @ Omega_inv
            full[jz, kz] = 0.0
        return full

    def polish(self, B, P):
        """Step toward the restricted optimum; returns (exact, moved)."""
        if not B.any():
            return False, False
        try:
            target = self.restricted_optimum(B)
        except (np.linalg.LinAlgError, ValueError):
            return False, False
        if not np.all(np.isfinite(target)):
            return False, False
        f0 = self.objective(B, P)
        start = B.copy()
        step = 1.0
        for _ in range(12):
            trial = start + step * (target - start)
            Pt = trial @ self.Omega
            if self.objective(trial, Pt) < f0:
                B[...] = trial
                P[...] = Pt
                exact = step == 1.0 and np.array_equal(np.sign(target), np.sign(start))
                return exact, True
            step *= 0.5
        return False, False

    def solve(self, B, cfg: CdConfig, callback=None):
        P = B @ self.Omega
        scale_tol = cfg.tol
        sweeps = 0
        exact = False
        converged = False
        inner_active = cfg.active_set

        def note():
            if callback is not None:
                callback(B)

        polished_at_rest = False
        while sweeps < cfg.max_sweeps:
            d, bmax, _ = _sweep(self.XtX, self.A, self.Omega, self.lamW, B, P, self.n, False)
            sweeps += 1
            note()
            if d < scale_tol * max(1.0, bmax):
                if not (exact or polished_at_rest):
                    polished_at_rest = True
                    exact, moved = self.polish(B, P)
                    if moved:
                        note()
                        continue
                converged = True
                break
            exact = polished_at_rest = False
            while sweeps < cfg.max_sweeps:
                d, bmax, changed = _sweep(self.XtX, self.A, self.Omega, self.lamW, B, P,
                                          self.n, inner_active)
                sweeps += 1
                note()
                if d < scale_tol * max(1.0, bmax):
                    break
                if not changed:
                    exact, moved = self.polish(B, P)
                    if moved:
                        note()
                    if exact:
                        break
        return converged, sweeps


def _check_omega(Omega, q):
    Omega = np.asarray(Omega, dtype=float)
    if Omega.shape != (q, q):
        raise InvalidInputError(f"Omega has shape {Omega.shape}, expected {(q, q)}")
    if not np.all(np.isfinite(Omega)):
        raise InvalidInputError("Omega has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(Omega))))
    if np.max(np.abs(Omega - Omega.T)) > 1e-10 * scale:
        raise InvalidInputError("Omega must be symmetric")
    try:
        np.linalg.cholesky(Omega)
    except np.linalg.LinAlgError:
        raise InvalidInputError("Omega must be positive definite") from None
    return 0.5 * (Omega + Omega.T)


def gram(dataset: Dataset):
    """(X'X, X'Y) for a dataset, cached on the instance."""
    cached = dataset.__dict__.get("_gram")
    if cached is None:
        X, Y = np.asarray(dataset.X), np.asarray(dataset.Y)
        cached = (X.T @ X, X.T @ Y)
        dataset.__dict__["_gram"] = cached
    return cached


def _usable_columns(XtX):
    d = np.diag(XtX)
    return np.flatnonzero(d > 1e-14 * max(1.0, float(d.max(initial=0.0))))


def solve_penalized_B(dataset: Dataset, Omega, penalty: PenaltySpec, B0=None,
                      cfg: CdConfig | None = None,
                      callback: Callable[[np.ndarray], None] | None = None) -> CdSolution:
    """Minimise the penalised trace loss over B with ``Omega`` held fixed.

    Parameters
    ----------
    dataset : Dataset
        Training data (centred, or with the intercept already absorbed).
    Omega : (q, q) array
        Symmetric positive definite precision matrix.
    penalty : PenaltySpec
        Penalty level and optional weights.
    B0 : (p, q) array, optional
        Warm start; zeros when omitted.
    cfg : CdConfig, optional
    callback : callable, optional
        Called with the current iterate after every sweep and accepted
        support step. Meant for diagnostics; the argument must not be kept.

    Returns
    -------
    CdSolution
        ``B``, whether the sweep criterion was met, and the number of sweeps.
    """
    cfg = cfg or CdConfig()
    p, q = dataset.p, dataset.q
    Omega = _check_omega(Omega, q)
    B = np.zeros((p, q)) if B0 is None else np.array(B0, dtype=float)
    if B.shape != (p, q):
        raise InvalidInputError(f"B0 has shape {B.shape}, expected {(p, q)}")
    if not np.all(np.isfinite(B)):
        raise InvalidInputError("B0 must be finite")
    lamW = penalty.lam * penalty.weight_matrix(p, q)

    XtX, XtY = gram(dataset)
    cols = _usable_columns(XtX)
    out = np.zeros((p, q))
    if cols.size == 0:
        return CdSolution(out, True, 0)
    prob = _Problem(XtX[np.ix_(cols, cols)], XtY[cols], dataset.n, Omega, lamW[cols])
    Bs = np.ascontiguousarray(B[cols])
    if callback is not None:
        def cb(Bsub):
            full = np.zeros((p, q))
            full[cols] = Bsub
            callback(full)
    else:
        cb = None
    converged, sweeps = prob.solve(Bs, cfg, cb)
    out[cols] = Bs
    return CdSolution(out, converged, sweeps)


def penalized_trace_objective(dataset: Dataset, Omega, penalty: PenaltySpec, B) -> float:
    """tr[(1/n)(Y - XB)'(Y - XB) Omega] + penalty, evaluated densely."""
    R = np.asarray(dataset.Y) - np.asarray(dataset.X) @ B
    return float(np.sum((R.T @ R) * Omega) / dataset.n + penalty.value(np.asarray(B)))


def kkt_residual(dataset: Dataset, Omega, penalty: PenaltySpec, B) -> float:
    """Largest violation of the subgradient optimality conditions."""
    B = np.asarray(B, dtype=float)
    XtX, XtY = gram(dataset)
    G = (XtY - XtX @ B) @ np.asarray(Omega, dtype=float) / dataset.n
    lamW = penalty.lam * penalty.weight_matrix(*B.shape)
    at_zero = np.maximum(np.abs(2.0 * G) - lamW, 0.0)
    off_zero = np.abs(-2.0 * G + lamW * np.sign(B))
    return float(np.max(np.where(B == 0.0, at_zero, off_zero), initial=0.0))


def ols(dataset: Dataset) -> np.ndarray:
    return np.linalg.lstsq(np.asarray(dataset.X), np.asarray(dataset.Y), rcond=None)[0]


def compute_adaptive_weights(dataset: Dataset, r: float, cap: float = WEIGHT_CAP) -> np.ndarray:
    """Adaptive-lasso weights 1 / |B_ols|^r, capped at ``cap``."""
    if not r > 1:
        raise InvalidInputError(f"r must exceed 1, got {r!r}")
    if dataset.n <= dataset.p + dataset.q:
        raise UnsupportedRegimeError(
            f"adaptive weights need n > p + q (n={dataset.n}, p={dataset.p}, q={dataset.q})")
    absb = np.abs(ols(dataset))
    with np.errstate(divide="ignore", over="ignore"):
        w = np.where(absb > 0, absb ** -r, cap)
    return np.minimum(w, cap)


def fit_lasso(dataset: Dataset, lam, mode: str = "combined", B0=None,
              cfg: CdConfig | None = None) -> CdSolution:
    """Lasso baseline ignoring response correlation (Omega = I).

    ``mode="separate"`` takes one lambda per response; with an identity
    precision the objective splits by column, so this is a single solve
    with column-wise penalty weights.
    """
    q = dataset.q
    if mode == "combined":
        penalty = PenaltySpec(float(lam))
    elif mode == "separate":
        lams = np.broadcast_to(np.asarray(lam, dtype=float), (q,))
        penalty = PenaltySpec(1.0, np.tile(lams, (dataset.p, 1)))
    else:
        raise InvalidInputError(f"unknown lasso mode {mode!r}")
    return solve_penalized_B(dataset, np.eye(q), penalty, B0, cfg)


def fit_ridge(dataset: Dataset, lam, mode: str = "combined") -> np.ndarray:
    """Per-response ridge (X'X + n lam I)^-1 X'Y_k.

    ``lam`` is a scalar in combined mode and a scalar or length-q vector in
    separate mode.
    """
    XtX, XtY = gram(dataset)
    n, p, q = dataset.n, dataset.p, dataset.q
    if mode == "combined":
        lams = np.full(q, float(lam))
    elif mode == "separate":
        lams = np.broadcast_to(np.asarray(lam, dtype=float), (q,)).copy()
    else:
        raise InvalidInputError(f"unknown ridge mode {mode!r}")
    if np.any(lams < 0) or not np.all(np.isfinite(lams)):
        raise InvalidInputError("ridge lambda must be finite and nonnegative")
    B = np.empty((p, q))
    for value in np.unique(lams):
        cols = np.flatnonzero(lams == value)
        M = XtX + n * value * np.eye(p)
        if value == 0 and p >= n:
            raise InvalidInputError("ridge with lambda = 0 is singular when p >= n")
        try:
            B[:, cols] = sla.solve(M, XtY[:, cols], assume_a="pos")
        except (np.linalg.LinAlgError, sla.LinAlgError):
            raise InvalidInputError("singular ridge system") from None
    return B


def solution_path(dataset: Dataset, Omega, lams, weights=None, B0=None,
                  cfg: CdConfig | None = None) -> list[np.ndarray]:
    """Solutions over ``lams`` in the given order, each warm-started from the last."""
    B = B0
    path = []
    for lam in lams:
        B = solve_penalized_B(dataset, Omega, PenaltySpec(float(lam), weights), B, cfg).B
        path.append(B)
    return path
