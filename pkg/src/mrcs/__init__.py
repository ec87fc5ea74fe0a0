"""Penalised multivariate regression with equicorrelated errors."""

from .core import (CsParams, Dataset, DegenerateResidualError, FitResult, GenEqParams,
                   InvalidInputError, PenaltySpec, UnsupportedRegimeError)
from .solvers import (FITTERS, SolverConfig, fit_ap_mrcs, fit_ap_mrgcs, fit_mrcs,
                      fit_mrgcs, fit_oracle)
from .tuning import CvPlan, cross_validate, cv_baselines

__version__ = "0.1.0"

__all__ = [
    "CsParams", "GenEqParams", "Dataset", "PenaltySpec", "FitResult",
    "InvalidInputError", "DegenerateResidualError", "UnsupportedRegimeError",
    "SolverConfig", "FITTERS", "fit_mrcs", "fit_ap_mrcs", "fit_mrgcs", "fit_ap_mrgcs",
    "fit_oracle", "CvPlan", "cross_validate", "cv_baselines",
]
