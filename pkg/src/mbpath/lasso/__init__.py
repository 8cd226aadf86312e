"""Coordinate-descent Lasso with penalty factors, lambda paths and k-fold CV."""

from ._kernel import BACKEND
from .kkt import kkt_ok, kkt_violation
from .solver import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    KKT_TOL,
    CvResult,
    LassoFit,
    PenalizedProblem,
    cross_validate,
    fit_cv,
    lambda_max,
    lambda_path,
    make_folds,
    soft_threshold,
    solve,
    solve_path,
)

__all__ = [
    "BACKEND",
    "CvResult",
    "DEFAULT_MAX_ITER",
    "DEFAULT_TOL",
    "KKT_TOL",
    "LassoFit",
    "PenalizedProblem",
    "cross_validate",
    "fit_cv",
    "kkt_ok",
    "kkt_violation",
    "lambda_max",
    "lambda_path",
    "make_folds",
    "soft_threshold",
    "solve",
    "solve_path",
]
