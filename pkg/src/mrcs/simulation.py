"""Synthetic data, evaluation metrics and Monte Carlo drivers.

Random streams come from :func:`mrcs.core.make_rng`. Replication ``r`` of a
scenario with seed ``s`` draws its coefficients, covariance and data from
the streams ``s/rep/r/B``, ``s/rep/r/sigma`` and ``s/rep/r/data``, so any
replication can be regenerated alone and replications can run in any order.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .core import CsParams, Dataset, GenEqParams, InvalidInputError, make_rng
from .lasso import CdConfig, compute_adaptive_weights, fit_lasso, fit_ridge, ols

SCENARIO_VERSION = 1
SQRT2, SQRT3 = np.sqrt(2.0), np.sqrt(3.0)

# Blocks of (count, eta) for the heterogeneous, asymmetric marginal scales.
ETA_PRESETS = {
    "asym-20-50": [(10, 0.5), (10, 1 / SQRT2), (10, 1.0), (10, SQRT3), (10, 3.0)],
    "asym-50-20": [(4, 0.5), (4, 1 / SQRT2), (4, 1.0), (4, SQRT3), (4, 3.0)],
    "asym-80-80": [(10, 0.5), (10, 1 / SQRT2), (10, 2 ** -0.25), (10, 1.0), (10, SQRT3),
                   (15, 2.0), (15, 3.0)],
}
COV_FAMILIES = ("equicorrelation", "corrupted")
B_FAMILIES = ("bernoulli-mask", "uniform-dense")


def preset_etas(name: str) -> np.ndarray:
    if name not in ETA_PRESETS:
        raise InvalidInputError(f"unknown eta preset {name!r}; choose from {sorted(ETA_PRESETS)}")
    return np.concatenate([np.full(k, v) for k, v in ETA_PRESETS[name]])


@dataclass(frozen=True)
class Scenario:
    """One simulation setting.

    ``eta`` is a constant, an explicit length-q list, or a preset name from
    ``ETA_PRESETS``. The corrupted family mixes half of a theta = 0.9
    compound symmetry with a random rotation V D V' where the diagonal of D
    takes ``d_values[0]`` with probability ``d_prob`` and ``d_values[1]``
    otherwise; ``omega`` is the mixing weight.
    """

    n: int = 50
    p: int = 20
    q: int = 50
    s1: float = 0.5
    s2: float = 0.5
    theta: float = 0.9
    eta: float | list | str = 1.0
    cov_family: str = "equicorrelation"
    omega: float = 1.0
    d_prob: float = 0.5
    d_values: tuple = (0.1, 10.0)
    b_family: str = "bernoulli-mask"
    bound: float = 0.25
    test_n: int = 200
    seed: int = 0

    def __post_init__(self):
        if min(self.n, self.p, self.q, self.test_n) < 1:
            raise InvalidInputError("dimensions must be positive")
        if not (0 <= self.s1 <= 1 and 0 <= self.s2 <= 1):
            raise InvalidInputError("s1 and s2 must lie in [0, 1]")
        if not 0 <= self.theta < 1:
            raise InvalidInputError("theta must lie in [0, 1)")
        if not 0 <= self.omega <= 1 or not 0 <= self.d_prob <= 1:
            raise InvalidInputError("omega and d_prob must lie in [0, 1]")
        if len(self.d_values) != 2 or min(self.d_values) <= 0:
            raise InvalidInputError("d_values must be two positive numbers")
        if not self.bound > 0:
            raise InvalidInputError("bound must be positive")
        if self.cov_family not in COV_FAMILIES:
            raise InvalidInputError(f"cov_family must be one of {COV_FAMILIES}")
        if self.b_family not in B_FAMILIES:
            raise InvalidInputError(f"b_family must be one of {B_FAMILIES}")
        if isinstance(self.eta, list):
            object.__setattr__(self, "eta", [float(v) for v in self.eta])
        object.__setattr__(self, "d_values", tuple(float(v) for v in self.d_values))
        self.etas()

    def etas(self) -> np.ndarray:
        if isinstance(self.eta, str):
            e = preset_etas(self.eta)
        else:
            e = np.broadcast_to(np.asarray(self.eta, dtype=float), (self.q,)).copy() \
                if np.ndim(self.eta) == 0 else np.asarray(self.eta, dtype=float)
        if e.shape != (self.q,) or np.any(e <= 0) or not np.all(np.isfinite(e)):
            raise InvalidInputError(f"eta specification does not give {self.q} positive scales")
        return e

    def to_json(self) -> str:
        d = asdict(self)
        d["d_values"] = list(self.d_values)
        return json.dumps({"version": SCENARIO_VERSION, "scenario": d}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"scenario is not valid JSON: {exc}") from None
        if not isinstance(doc, dict) or doc.get("version") != SCENARIO_VERSION:
            raise InvalidInputError(f"scenario version must be {SCENARIO_VERSION}")
        fields = doc.get("scenario")
        if not isinstance(fields, dict):
            raise InvalidInputError("scenario body missing")
        unknown = set(fields) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown scenario fields: {sorted(unknown)}")
        try:
            return cls(**fields)
        except TypeError as exc:
            raise InvalidInputError(str(exc)) from None


def gen_B(p: int, q: int, s1: float, s2: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian entries masked elementwise (rate s1) and by relevant predictor rows (rate s2)."""
    if not (0 <= s1 <= 1 and 0 <= s2 <= 1):
        raise InvalidInputError("s1 and s2 must lie in [0, 1]")
    W = rng.standard_normal((p, q))
    K = rng.random((p, q)) < s1
    rows = rng.random(p) < s2
    return W * K * rows[:, None]


def gen_B_uniform(p: int, q: int, bound: float, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-bound, bound, size=(p, q))


def gram_schmidt(A: np.ndarray, tol: float = 1e-10) -> np.ndarray | None:
    """Orthonormalise columns with two projection passes; None if rank deficient."""
    A = np.array(A, dtype=float)
    Qm = np.zeros_like(A)
    for j in range(A.shape[1]):
        v = A[:, j].copy()
        norm0 = np.linalg.norm(v)
        for _ in range(2):
            v -= Qm[:, :j] @ (Qm[:, :j].T @ v)
        nv = np.linalg.norm(v)
        if norm0 == 0 or nv <= tol * norm0:
            return None
        Qm[:, j] = v / nv
    return Qm


def random_orthogonal(q: int, rng: np.random.Generator, retries: int = 10) -> np.ndarray:
    for _ in range(retries):
        V = gram_schmidt(rng.standard_normal((q, q)))
        if V is not None:
            return V
    raise InvalidInputError("could not draw a full-rank matrix for orthogonalisation")


def equicorrelation_sigma(etas, theta: float) -> np.ndarray:
    etas = np.asarray(etas, dtype=float)
    q = etas.size
    C = (1.0 - theta) * np.eye(q) + theta * np.ones((q, q))
    return np.outer(etas, etas) * C


def gen_sigma(q: int, scenario: Scenario, rng: np.random.Generator | None = None) -> np.ndarray:
    """Error covariance for a scenario; the corrupted family consumes ``rng``."""
    if q != scenario.q:
        raise InvalidInputError("q does not match the scenario")
    if scenario.cov_family == "equicorrelation":
        return equicorrelation_sigma(scenario.etas(), scenario.theta)
    base = 0.5 * equicorrelation_sigma(np.ones(q), 0.9)
    if scenario.omega == 0:
        return base
    if rng is None:
        raise InvalidInputError("the corrupted family needs a random generator")
    V = random_orthogonal(q, rng)
    a, b = scenario.d_values
    d = np.where(rng.random(q) < scenario.d_prob, a, b)
    S = (1 - scenario.omega) * base + scenario.omega * (V * d) @ V.T
    return 0.5 * (S + S.T)


def ar_sigma_x(p: int, rho: float = 0.7) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def response_means(q: int) -> np.ndarray:
    return np.linspace(1.0, 5.0, q) if q > 1 else np.ones(1)


class SimData(NamedTuple):
    train: Dataset
    test: Dataset
    B_true: np.ndarray
    Sigma_X: np.ndarray
    Sigma: np.ndarray


def _draw(n, Sigma_X, Sigma, mu, B, rng):
    X = rng.multivariate_normal(np.zeros(len(Sigma_X)), Sigma_X, size=n, method="cholesky")
    E = rng.multivariate_normal(np.zeros(len(Sigma)), Sigma, size=n, method="cholesky")
    return X, mu + X @ B + E


def gen_dataset(scenario: Scenario, rng: np.random.Generator | None = None,
                rep: int = 0) -> SimData:
    """Training and test sets for one replication.

    Without ``rng`` the three labelled streams of replication ``rep`` are
    used; with ``rng`` everything is drawn from it in order.
    """
    s = scenario
    rng_b = rng or make_rng(s.seed, "rep", rep, "B")
    rng_s = rng or make_rng(s.seed, "rep", rep, "sigma")
    rng_d = rng or make_rng(s.seed, "rep", rep, "data")
    if s.b_family == "bernoulli-mask":
        B = gen_B(s.p, s.q, s.s1, s.s2, rng_b)
    else:
        B = gen_B_uniform(s.p, s.q, s.bound, rng_b)
    Sigma = gen_sigma(s.q, s, rng_s)
    Sigma_X = ar_sigma_x(s.p)
    mu = response_means(s.q)
    X, Y = _draw(s.n, Sigma_X, Sigma, mu, B, rng_d)
    Xt, Yt = _draw(s.test_n, Sigma_X, Sigma, mu, B, rng_d)
    return SimData(Dataset.from_arrays(X, Y), Dataset.from_arrays(Xt, Yt, center=False),
                   B, Sigma_X, Sigma)


@dataclass(frozen=True)
class MetricsReport:
    model_error: float
    prediction_error: float
    tnr: float
    tpr: float


def metrics(B_hat, B_true, Sigma_X, test: Dataset | None = None, predictions=None,
            per_observation: bool = False) -> MetricsReport:
    """Model error, test prediction error and support rates.

    TNR (TPR) is NaN when ``B_true`` has no zero (nonzero) entries.
    Prediction error is NaN when no test set is given.
    """
    B_hat = np.asarray(B_hat, dtype=float)
    B_true = np.asarray(B_true, dtype=float)
    Sigma_X = np.asarray(Sigma_X, dtype=float)
    if B_hat.shape != B_true.shape or Sigma_X.shape != (B_true.shape[0],) * 2:
        raise InvalidInputError(
            f"shape mismatch: B_hat {B_hat.shape}, B_true {B_true.shape}, Sigma_X {Sigma_X.shape}")
    D = B_hat - B_true
    model_error = float(np.sum(D * (Sigma_X @ D)))
    pred = float("nan")
    if test is not None:
        Xt, Yt = test.raw()
        P = np.asarray(predictions, dtype=float)
        if P.shape != Yt.shape:
            raise InvalidInputError(f"predictions have shape {P.shape}, expected {Yt.shape}")
        pred = float(np.sum((P - Yt) ** 2))
        if per_observation:
            pred /= Yt.shape[0]
    zero, hat_zero = B_true == 0, B_hat == 0
    tnr = float(np.sum(zero & hat_zero) / zero.sum()) if zero.any() else float("nan")
    tpr = float(np.sum(~zero & ~hat_zero) / (~zero).sum()) if (~zero).any() else float("nan")
    return MetricsReport(model_error, pred, tnr, tpr)


# --- limiting covariance of the one-step covariance estimator -------------

def _fourth_moment_cov(S: np.ndarray) -> np.ndarray:
    """cov(E_j E_k, E_l E_m) = S_jl S_km + S_jm S_kl for Gaussian E ~ N(0, S)."""
    return np.einsum("jl,km->jklm", S, S) + np.einsum("jm,kl->jklm", S, S)


def limiting_V_gaussian(params: CsParams, q: int) -> np.ndarray:
    """2 x 2 limiting covariance of (E'E / q, E'QE / (q(q - 1))) for Gaussian rows.

    Q = qI - 11'. The cross term uses 2 / (q^2 (q - 1)) on the covariance
    of the off-diagonal product sum with the squared norm, which is the
    factor that agrees with the exact covariance of the two quadratic forms.
    """
    if q < 2:
        raise InvalidInputError("q must be at least 2")
    S = sigma_cs(params, q)
    C = _fourth_moment_cov(S)
    I = np.eye(q)
    Q = q * I - np.ones((q, q))
    upper = np.triu(np.ones((q, q)), 1)
    v11 = np.einsum("jk,lm,jklm->", I, I, C) / q ** 2
    v22 = np.einsum("jk,lm,jklm->", Q, Q, C) / (q ** 2 * (q - 1) ** 2)
    var_sq = np.einsum("jk,lm,jklm->", I, I, C)
    cov_cross = np.einsum("jk,lm,jklm->", upper, I, C)
    v12 = var_sq / q ** 2 - 2.0 * cov_cross / (q ** 2 * (q - 1))
    return np.array([[v11, v12], [v12, v22]])


def sigma_cs(params: CsParams, q: int) -> np.ndarray:
    return params.eta2 * equicorrelation_sigma(np.ones(q), params.theta)


def theta_variance_literal(V: np.ndarray, eta2: float) -> float:
    """W'VW with W = (1, -1/eta2)."""
    W = np.array([1.0, -1.0 / eta2])
    return float(W @ V @ W)


def theta_variance_delta(V: np.ndarray, eta2: float, theta: float) -> float:
    """Delta-method variance of theta = (d - a) / d at (d, a) = (eta2, eta2 (1 - theta))."""
    g = np.array([(1.0 - theta) / eta2, -1.0 / eta2])
    return float(g @ V @ g)


# --- asymptotics ------------------------------------------------------------

def checkerboard_B(p: int, q: int) -> np.ndarray:
    """Unit coefficients where row + column is even, zeros elsewhere."""
    i, j = np.indices((p, q))
    return ((i + j) % 2 == 0).astype(float)


def fit_adaptive_cs(dataset: Dataset, lam: float, r: float, cfg=None):
    """Adaptively weighted compound-symmetry fit started from least squares."""
    from .solvers import fit_mrcs

    weights = compute_adaptive_weights(dataset, r)
    return fit_mrcs(dataset, lam, cfg, B_init=ols(dataset), weights=weights)


def asymptotics_harness(p: int, q: int, theta: float, eta2: float, n_list, reps: int,
                        r: float = 2.0, seed: int = 0, threads: int = 1) -> dict:
    """Sampling behaviour of the adaptive fit as n grows.

    Uses lambda = n^(-(r + 2) / 4), which satisfies sqrt(n) lambda -> 0 and
    n^((r + 1) / 2) lambda -> infinity. Returns column arrays keyed by name,
    one row per n.
    """
    n_list = [int(n) for n in n_list]
    if not r > 1:
        raise InvalidInputError("r must exceed 1")
    if any(n <= p + q for n in n_list):
        raise InvalidInputError("every n must exceed p + q")
    if reps < 2:
        raise InvalidInputError("need at least two replications")
    B_true = checkerboard_B(p, q)
    Sigma_X = ar_sigma_x(p)
    Sigma = sigma_cs(CsParams(eta2, theta), q)
    zero = B_true == 0
    rows = []
    for n in n_list:
        lam = n ** (-(r + 2) / 4)

        def one(rep, n=n, lam=lam):
            rng = make_rng(seed, "asymptotics", p, q, n, "rep", rep)
            X, Y = _draw(n, Sigma_X, Sigma, np.zeros(q), B_true, rng)
            fit = fit_adaptive_cs(Dataset.from_arrays(X, Y), lam, r)
            Bz = fit.B[zero] == 0
            return (fit.cov.eta2, fit.cov.theta, Bz.mean() if Bz.size else np.nan,
                    float(Bz.all()), float(np.all(fit.B[~zero] != 0)))

        res = np.array(_map(one, range(reps), threads))
        e2, th = res[:, 0], res[:, 1]
        rmse_e2 = float(np.sqrt(np.mean((e2 - eta2) ** 2)))
        rmse_th = float(np.sqrt(np.mean((th - theta) ** 2)))
        rows.append(dict(
            n=n, lam=lam, rmse_eta2=rmse_e2, rmse_theta=rmse_th,
            root_n_rmse_eta2=np.sqrt(n) * rmse_e2, root_n_rmse_theta=np.sqrt(n) * rmse_th,
            mean_eta2=float(e2.mean()), se_eta2=float(e2.std(ddof=1) / np.sqrt(reps)),
            mean_theta=float(th.mean()), var_root_n_theta=float(n * th.var(ddof=1)),
            zero_rate=float(res[:, 2].mean()), zero_exact_rate=float(res[:, 3].mean()),
            nonzero_kept_rate=float(res[:, 4].mean())))
    return {k: np.array([row[k] for row in rows]) for k in rows[0]}


# --- replications -----------------------------------------------------------

EQUI_METHODS = ("mrcs", "ap-mrcs", "mrgcs", "ap-mrgcs", "oracle")
BASE_METHODS = ("lasso-comb", "lasso-sep", "ridge-comb", "ridge-sep")
ALL_METHODS = EQUI_METHODS + BASE_METHODS


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


DEFAULT_METHODS = ("mrcs", "ap-mrcs", "lasso-comb", "lasso-sep")


def fit_methods(sim: SimData, methods, cv_folds: int = 5, grid=None, seed: int = 0,
                cd: CdConfig | None = None) -> dict:
    """Cross-validate and fit each method; returns {method: (B_hat, lambda)}.

    ``mrcs`` and ``mrgcs`` are skipped when p >= n.
    """
    from .solvers import FITTERS, SolverConfig, fit_oracle, initial_B
    from .tuning import CvPlan, cross_validate, cv_baselines, prepare_folds

    unknown = set(methods) - set(ALL_METHODS)
    if unknown:
        raise InvalidInputError(f"unknown methods {sorted(unknown)}")
    cd = cd or CdConfig()
    train = sim.train
    plan = CvPlan(cv_folds, seed=seed) if grid is None else CvPlan(cv_folds, np.asarray(grid), seed)
    cfg = SolverConfig(seed=seed, cd=cd)
    out = {}
    equi = [m for m in methods if m in EQUI_METHODS
            and not (m in ("mrcs", "mrgcs") and train.p >= train.n)]
    if equi:
        folds = prepare_folds(train, plan, cfg)
        B0 = initial_B(train, cfg)
        Omega = np.linalg.inv(sim.Sigma)
        Omega = 0.5 * (Omega + Omega.T)
        for m in equi:
            lam = cross_validate(train, m, plan, cfg, omega_true=Omega, folds=folds).lam
            if m == "oracle":
                B = fit_oracle(train, lam, Omega, cd, B0)
            else:
                B = FITTERS[m](train, lam, cfg, B_init=B0).B
            out[m] = (B, lam)
    for m in methods:
        if m in BASE_METHODS:
            lam = cv_baselines(train, m, plan, cd).lam
            family, mode = m.split("-")
            mode = "combined" if mode == "comb" else "separate"
            B = fit_lasso(train, lam, mode, cfg=cd).B if family == "lasso" else fit_ridge(train, lam, mode)
            out[m] = (B, lam)
    return out


def run_replication(scenario: Scenario, rep: int, methods=DEFAULT_METHODS, cv_folds: int = 5,
                    grid=None, cd: CdConfig | None = None) -> dict:
    """Generate replication ``rep`` and return {method: MetricsReport}."""
    sim = gen_dataset(scenario, rep=rep)
    cv_seed = int(make_rng(scenario.seed, "rep", rep, "cv").integers(2 ** 63))
    fits = fit_methods(sim, methods, cv_folds, grid, cv_seed, cd)
    reports = {}
    for m, (B, _) in fits.items():
        pred = sim.train.intercept(B) + np.asarray(sim.test.X) @ B
        reports[m] = metrics(B, sim.B_true, sim.Sigma_X, sim.test, pred)
    return reports


def run_replications(scenario: Scenario, reps: int, methods=DEFAULT_METHODS,
                     cv_folds: int = 5, grid=None, threads: int = 1) -> list[dict]:
    """Reports for replications 0..reps-1, in replication order."""
    return _map(lambda r: run_replication(scenario, r, methods, cv_folds, grid), range(reps),
                threads)


def summarize(reports: list[dict]) -> dict:
    """Per-method quartiles of each metric: {method: {metric: (q1, median, q3)}}."""
    methods = sorted({m for rep in reports for m in rep})
    out = {}
    for m in methods:
        rows = [asdict(rep[m]) for rep in reports if m in rep]
        out[m] = {}
        for key in ("model_error", "prediction_error", "tnr", "tpr"):
            vals = np.sort(np.array([row[key] for row in rows], dtype=float))
            vals = vals[~np.isnan(vals)]
            out[m][key] = tuple(np.percentile(vals, [25, 50, 75])) if vals.size else (np.nan,) * 3
    return out


def cs_true_params(scenario: Scenario) -> CsParams | GenEqParams:
    """Structured parameters of an equicorrelation scenario."""
    if scenario.cov_family != "equicorrelation":
        raise InvalidInputError("only equicorrelation scenarios have structured parameters")
    e = scenario.etas()
    if np.all(e == e[0]):
        return CsParams(float(e[0] ** 2), scenario.theta)
    return GenEqParams(e, scenario.theta)


__all__ = [
    "Scenario", "SimData", "MetricsReport", "ETA_PRESETS", "preset_etas", "gen_B",
    "gen_B_uniform", "gram_schmidt", "gen_sigma", "gen_dataset", "metrics",
    "limiting_V_gaussian", "theta_variance_literal", "theta_variance_delta",
    "asymptotics_harness", "run_replication", "run_replications", "summarize",
    "checkerboard_B", "ar_sigma_x", "response_means", "cs_true_params",
]
