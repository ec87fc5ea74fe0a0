"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure
(including non-convergence under ``--strict``). Every output file is written
to a temporary path and renamed into place, so a failed command leaves
nothing behind.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from .core import CsParams, Dataset, GenEqParams, InvalidInputError

FIT_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
FIT_METHODS = ("mrcs", "ap-mrcs", "mrgcs", "ap-mrgcs",
               "lasso-comb", "lasso-sep", "ridge-comb", "ridge-sep")
REP_FILES = ("X_train", "Y_train", "X_test", "Y_test", "B_true", "Sigma_true")


class UsageError(Exception):
    pass


class NumericalFailure(RuntimeError):
    pass


# --- file helpers -----------------------------------------------------------

def read_matrix(path, header: bool = False) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc.strerror}") from None
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if header:
        lines = lines[1:]
    if not lines:
        raise InvalidInputError(f"{path} holds no data rows")
    try:
        rows = [[float(v) for v in ln.split(",")] for ln in lines]
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    if len({len(r) for r in rows}) != 1:
        raise InvalidInputError(f"{path}: rows have differing column counts")
    M = np.array(rows, dtype=float)
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{path} contains non-finite values")
    return M


def matrix_csv(M, header: bool = False) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    buf = io.StringIO()
    if header:
        buf.write(",".join(f"c{j}" for j in range(M.shape[1])) + "\n")
    np.savetxt(buf, M, fmt="%.17g", delimiter=",")
    return buf.getvalue()


def atomic_write(path, text: str) -> None:
    path = Path(path)
    d = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(dir=d, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _parse_grid(text: str | None):
    if text is None:
        return None
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise InvalidInputError(f"cannot parse grid {text!r}") from None


# --- fit artifacts ----------------------------------------------------------

def cov_to_dict(cov):
    if cov is None:
        return None
    if isinstance(cov, GenEqParams):
        return {"family": "general-equicorrelation", "etas": cov.etas.tolist(),
                "theta": cov.theta}
    return {"family": "compound-symmetry", "eta2": cov.eta2, "theta": cov.theta}


def cov_from_dict(d):
    if d is None:
        return None
    if d.get("family") == "general-equicorrelation":
        return GenEqParams(np.array(d["etas"], dtype=float), float(d["theta"]))
    return CsParams(float(d["eta2"]), float(d["theta"]))


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def fit_artifact(method, B, intercept, cov, lam, seed, converged, grid=None, cv_table=None,
                 outer_iters=None) -> dict:
    return {
        "version": FIT_VERSION,
        "method": method,
        "B": np.asarray(B, dtype=float).tolist(),
        "intercept": np.asarray(intercept, dtype=float).tolist(),
        "cov": cov_to_dict(cov),
        "lambda": _jsonable(lam),
        "grid": None if grid is None else _jsonable(np.asarray(grid, dtype=float)),
        "cv_table": None if cv_table is None else _jsonable(np.asarray(cv_table, dtype=float)),
        "seed": int(seed),
        "converged": bool(converged),
        "outer_iters": outer_iters,
    }


def dump_artifact(art: dict) -> str:
    return json.dumps(art, indent=1, sort_keys=True) + "\n"


def load_artifact(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            art = json.load(fh)
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path} is not a fit artifact: {exc}") from None
    if not isinstance(art, dict) or "version" not in art:
        raise InvalidInputError(f"{path} has no version field")
    if art["version"] != FIT_VERSION:
        raise InvalidInputError(f"unsupported fit artifact version {art['version']!r}")
    B = np.array(art["B"], dtype=float)
    if B.ndim != 2:
        raise InvalidInputError("artifact coefficient matrix is not 2-D")
    art["B"] = B
    art["intercept"] = np.array(art["intercept"], dtype=float)
    return art


# --- commands ---------------------------------------------------------------

def _summary_csv(summary: dict) -> str:
    lines = ["method,metric,q1,median,q3"]
    for m in sorted(summary):
        for key, (a, b, c) in summary[m].items():
            lines.append(f"{m},{key},{a:.17g},{b:.17g},{c:.17g}")
    return "\n".join(lines) + "\n"


def _metrics_csv(reports: list[dict]) -> str:
    lines = ["rep,method,model_error,prediction_error,tnr,tpr"]
    for r, rep in enumerate(reports):
        for m in sorted(rep):
            x = rep[m]
            lines.append(f"{r},{m},{x.model_error:.17g},{x.prediction_error:.17g},"
                         f"{x.tnr:.17g},{x.tpr:.17g}")
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    from dataclasses import replace

    from .simulation import Scenario, gen_dataset, run_replications, summarize

    if args.scenario is None or args.out is None:
        raise UsageError("simulate needs --scenario and --out")
    try:
        text = Path(args.scenario).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read {args.scenario}: {exc.strerror}") from None
    scenario = Scenario.from_json(text)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    reps = args.reps if args.reps is not None else 1
    if reps < 1:
        raise UsageError("--reps must be at least 1")
    methods = () if args.methods == "none" else tuple(m for m in args.methods.split(",") if m)
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise InvalidInputError(f"{out} exists and is not a directory")
    parent = out.resolve().parent
    if not parent.is_dir():
        raise InvalidInputError(f"parent directory of {out} does not exist")
    try:
        stage = Path(tempfile.mkdtemp(dir=parent, prefix=f".{out.name}."))
    except OSError as exc:
        raise InvalidInputError(f"cannot write under {parent}: {exc.strerror}") from None
    try:
        for r in range(reps):
            sim = gen_dataset(scenario, rep=r)
            d = stage if reps == 1 else stage / f"rep_{r:03d}"
            d.mkdir(exist_ok=True)
            mats = (sim.train.raw()[0], sim.train.raw()[1], sim.test.raw()[0],
                    sim.test.raw()[1], sim.B_true, sim.Sigma)
            for name, M in zip(REP_FILES, mats):
                (d / f"{name}.csv").write_text(matrix_csv(M, args.header), encoding="utf-8")
        (stage / "scenario.json").write_text(scenario.to_json() + "\n", encoding="utf-8")
        if methods:
            reports = run_replications(scenario, reps, methods, args.cv_folds,
                                       _parse_grid(args.grid), args.threads)
            (stage / "metrics.csv").write_text(_metrics_csv(reports), encoding="utf-8")
            (stage / "summary.csv").write_text(_summary_csv(summarize(reports)), encoding="utf-8")
        if out.exists():
            shutil.rmtree(out)
        os.replace(stage, out)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    print(f"wrote {reps} replication(s) to {out}")
    return EXIT_OK


def run_fit(X, Y, method: str, lam=None, cv_folds: int = 5, grid=None, seed: int = 0,
            threads: int = 1) -> dict:
    """Fit ``method`` on raw arrays and return a fit artifact dictionary."""
    from .lasso import fit_lasso, fit_ridge
    from .solvers import FITTERS, SolverConfig, initial_B
    from .tuning import DEFAULT_GRID, CvPlan, cross_validate, cv_baselines

    if method not in FIT_METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(FIT_METHODS)}")
    data = Dataset.from_arrays(X, Y)
    cfg = SolverConfig(seed=seed)
    if method in ("mrcs", "mrgcs") and data.p >= data.n:
        raise InvalidInputError(
            f"{method} is not available when p >= n (p={data.p}, n={data.n}); "
            f"use ap-{method} instead")
    table = used_grid = None
    if lam is None:
        plan = CvPlan(cv_folds, np.asarray(DEFAULT_GRID if grid is None else grid), seed)
        used_grid = plan.grid
        if method in FITTERS:
            res = cross_validate(data, method, plan, cfg, threads=threads)
        else:
            res = cv_baselines(data, method, plan)
        lam, table = res.lam, res.table
    if method in FITTERS:
        fit = FITTERS[method](data, float(lam), cfg, B_init=initial_B(data, cfg))
        return fit_artifact(method, fit.B, fit.intercept, fit.cov, fit.lam, seed, fit.converged,
                            used_grid, table, fit.outer_iters)
    family, mode = method.split("-")
    mode = "combined" if mode == "comb" else "separate"
    if family == "lasso":
        sol = fit_lasso(data, lam, mode)
        B, converged = sol.B, sol.converged
    else:
        B, converged = fit_ridge(data, lam, mode), True
    return fit_artifact(method, B, data.intercept(B), None, lam, seed, converged, used_grid, table)


def cmd_fit(args) -> int:
    if args.x is None or args.y is None or args.method is None or args.out is None:
        raise UsageError("fit needs --x, --y, --method and --out")
    X = read_matrix(args.x, args.header)
    Y = read_matrix(args.y, args.header)
    if X.shape[0] != Y.shape[0]:
        raise InvalidInputError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    art = run_fit(X, Y, args.method, args.lam, args.cv_folds, _parse_grid(args.grid),
                  args.seed or 0, args.threads)
    if args.strict and not art["converged"]:
        raise NumericalFailure(f"{args.method} did not converge")
    atomic_write(args.out, dump_artifact(art))
    print(f"wrote fit to {args.out} (lambda={art['lambda']})")
    return EXIT_OK


def predict_from(art: dict, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[1] != art["B"].shape[0]:
        raise InvalidInputError(
            f"X has {X.shape[1]} columns but the fit expects {art['B'].shape[0]}")
    return art["intercept"] + X @ art["B"]


def cmd_predict(args) -> int:
    if args.fit is None or args.x is None or args.out is None:
        raise UsageError("predict needs --fit, --x and --out")
    art = load_artifact(args.fit)
    P = predict_from(art, read_matrix(args.x, args.header))
    atomic_write(args.out, matrix_csv(P, args.header))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .simulation import metrics

    need = (args.fit, args.b_true, args.sigma_x, args.x_test, args.y_test)
    if any(v is None for v in need):
        raise UsageError("eval needs --fit, --b-true, --sigma-x, --x-test and --y-test")
    art = load_artifact(args.fit)
    Xt = read_matrix(args.x_test, args.header)
    Yt = read_matrix(args.y_test, args.header)
    if Xt.shape[0] != Yt.shape[0]:
        raise InvalidInputError("test X and Y have different row counts")
    test = Dataset.from_arrays(Xt, Yt, center=False)
    rep = metrics(art["B"], read_matrix(args.b_true, args.header),
                  read_matrix(args.sigma_x, args.header), test, predict_from(art, Xt))
    print("model_error,prediction_error,tnr,tpr")
    print(f"{rep.model_error:.17g},{rep.prediction_error:.17g},{rep.tnr:.17g},{rep.tpr:.17g}")
    print(f"model error {rep.model_error:.6g}; prediction error {rep.prediction_error:.6g}; "
          f"TNR {rep.tnr:.4f}; TPR {rep.tpr:.4f}")
    return EXIT_OK


def cmd_asymptotics(args) -> int:
    from .simulation import asymptotics_harness

    n_list = [int(v) for v in args.n_list.split(",") if v.strip()]
    table = asymptotics_harness(args.p, args.q, args.theta, args.eta2, n_list,
                                args.reps if args.reps is not None else 500, args.r,
                                args.seed or 0, args.threads)
    keys = list(table)
    lines = [",".join(keys)]
    for i in range(len(n_list)):
        lines.append(",".join(f"{table[k][i]:.17g}" for k in keys))
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--header", action="store_true",
                        help="CSV files carry (and outputs get) one header row")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out")

    p = argparse.ArgumentParser(prog="mrcs", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate replications and score methods")
    s.add_argument("--scenario", help="scenario JSON file")
    s.add_argument("--reps", type=int)
    s.add_argument("--methods", default="mrcs,ap-mrcs,lasso-comb,lasso-sep",
                   help="comma-separated methods to score, or 'none'")
    s.add_argument("--cv-folds", type=int, default=5)
    s.add_argument("--grid")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", parents=[common], help="fit one method and write an artifact")
    f.add_argument("--x")
    f.add_argument("--y")
    f.add_argument("--method", choices=FIT_METHODS)
    f.add_argument("--lambda", dest="lam", type=float, help="skip CV and use this lambda")
    f.add_argument("--cv-folds", type=int, default=5)
    f.add_argument("--grid", help="comma-separated lambda grid")
    f.add_argument("--strict", action="store_true", help="exit 4 when the fit does not converge")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", parents=[common], help="predict from a fit artifact")
    pr.add_argument("--fit")
    pr.add_argument("--x")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", parents=[common], help="score a fit against known truth")
    e.add_argument("--fit")
    e.add_argument("--b-true")
    e.add_argument("--sigma-x")
    e.add_argument("--x-test")
    e.add_argument("--y-test")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("asymptotics", parents=[common], help="large-sample behaviour table")
    a.add_argument("--p", type=int, default=3)
    a.add_argument("--q", type=int, default=3)
    a.add_argument("--theta", type=float, default=0.5)
    a.add_argument("--eta2", type=float, default=1.0)
    a.add_argument("--n-list", default="200,800,3200")
    a.add_argument("--reps", type=int)
    a.add_argument("--r", type=float, default=2.0)
    a.set_defaults(func=cmd_asymptotics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename or ''}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
