"""L1-penalized least squares with per-coefficient penalty factors.

Objective::

    (1/(2n)) ||y - A w||^2 + lam * sum_j pf_j |w_j|

Coefficients with ``pf_j = 0`` are left unpenalized.  No intercept is fitted;
callers are expected to pass centered data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..errors import ConvergenceWarning, DataError, SolverError
from . import _kernel

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 100_000
KKT_TOL = 1e-6
N_LAMBDAS = 100
LAMBDA_RATIO = 0.01
# slow coordinate descent tries an active-set polish every this many sweeps
POLISH_AFTER = 10


def soft_threshold(x, t):
    """sign(x) * max(|x| - t, 0); works elementwise on arrays."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be non-negative")
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@dataclass(frozen=True)
class PenalizedProblem:
    response: np.ndarray
    design: np.ndarray
    penalty_factor: Optional[np.ndarray] = None
    lam: Optional[float] = None

    def __post_init__(self):
        y = np.asarray(self.response, dtype=float)
        A = np.asarray(self.design, dtype=float)
        if A.ndim != 2 or y.ndim != 1 or A.shape[0] != y.shape[0]:
            raise DataError(f"inconsistent shapes: design {A.shape}, response {y.shape}")
        q = A.shape[1]
        pf = np.ones(q) if self.penalty_factor is None else np.asarray(self.penalty_factor, float)
        if pf.shape != (q,):
            raise DataError(f"penalty_factor has shape {pf.shape}, expected ({q},)")
        if np.any(pf < 0):
            raise DataError("penalty factors must be non-negative")
        if self.lam is not None and not self.lam >= 0:
            raise DataError("lambda must be non-negative")
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "design", A)
        object.__setattr__(self, "penalty_factor", pf)

    @property
    def n(self):
        return self.design.shape[0]

    @property
    def q(self):
        return self.design.shape[1]

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))

    def objective(self, w):
        r = self.response - self.design @ w
        return 0.5 * np.dot(r, r) / self.n + self.lam * np.sum(self.penalty_factor * np.abs(w))


@dataclass(frozen=True)
class LassoFit:
    coefficients: np.ndarray
    lam: float
    objective_value: float
    n_iterations: int
    converged: bool


@dataclass(frozen=True)
class CvResult:
    lambda_grid: np.ndarray
    mean_cv_error: np.ndarray
    se_cv_error: np.ndarray
    lambda_min: float
    lambda_chosen: float
    fold_assignment: np.ndarray
    rule: str = "min"


class _Gram:
    """Sufficient statistics (A'A/n, A'y/n) of a problem, ready for the kernel.

    Unpenalized coefficients are profiled out exactly: for fixed penalized
    coefficients w_P the optimal free block is
    w_F = G_FF^{-1} (c_F - G_FP w_P), which leaves a plain Lasso in w_P with
    Gram G_PP - G_PF G_FF^{-1} G_FP and score c_P - G_PF G_FF^{-1} c_F.
    Coordinate descent then never zig-zags between a free column and the
    penalized columns it is collinear with.
    """

    def __init__(self, gram, corr, pf):
        self.pf = pf
        self.pen = pf > 0
        self.free = ~self.pen
        if self.free.any():
            P, F = self.pen, self.free
            G_FF = gram[np.ix_(F, F)]
            G_FP = gram[np.ix_(F, P)]
            try:
                self._solve_ff = np.linalg.solve(G_FF, np.column_stack([corr[F], G_FP]))
            except np.linalg.LinAlgError:
                self._solve_ff = np.linalg.lstsq(
                    G_FF, np.column_stack([corr[F], G_FP]), rcond=None)[0]
            base, cross = self._solve_ff[:, 0], self._solve_ff[:, 1:]
            self.gram = np.ascontiguousarray(gram[np.ix_(P, P)] - G_FP.T @ cross)
            self.corr = np.ascontiguousarray(corr[P] - G_FP.T @ base)
            self._base, self._cross = base, cross
        else:
            self.gram = np.ascontiguousarray(gram)
            self.corr = np.ascontiguousarray(corr)
            self._base = np.zeros(0)
        self.thresh_pf = np.ascontiguousarray(pf[self.pen], dtype=float)

    @classmethod
    def of(cls, A, y, pf):
        n = A.shape[0]
        return cls(A.T @ A / n, A.T @ y / n, pf)

    def path(self, w, grid, tol, max_iter):
        """Warm-started fits along ``grid`` starting from ``w`` (updated in place).

        Returns ``(W, sweeps, converged)`` with one full coefficient row per lambda.
        """
        grid = np.ascontiguousarray(grid, dtype=float)
        W = np.empty((grid.size, w.size))
        if not self.pen.any():
            W[:] = self._base
            w[:] = self._base
            return W, np.zeros(grid.size, dtype=np.int_), np.ones(grid.size, dtype=bool)
        wp = np.ascontiguousarray(w[self.pen])
        Wp, sweeps, conv = _kernel.cd_path(self.gram, self.corr, wp, self.thresh_pf, grid,
                                           float(tol), int(max_iter), POLISH_AFTER)
        W[:, self.pen] = Wp
        if self.free.any():
            W[:, self.free] = self._base - Wp @ self._cross.T
        w[:] = W[-1]
        return W, sweeps, conv

    def run(self, w, lam, tol, max_iter):
        """Update ``w`` in place to the fit at ``lam``; returns (sweeps, converged)."""
        _, sweeps, conv = self.path(w, [lam], tol, max_iter)
        return int(sweeps[0]), bool(conv[0])


def _check_unpenalized_rank(problem):
    free = problem.penalty_factor == 0
    if free.any():
        block = problem.design[:, free]
        if np.linalg.matrix_rank(block) < block.shape[1]:
            raise SolverError("unpenalized columns are rank deficient")


def _make_fit(problem, w, sweeps, converged, max_iter):
    if not converged:
        warnings.warn(
            f"coordinate descent did not converge in {max_iter} sweeps "
            f"(lambda={problem.lam:.4g})",
            ConvergenceWarning,
            stacklevel=3,
        )
    return LassoFit(
        coefficients=w,
        lam=float(problem.lam),
        objective_value=float(problem.objective(w)),
        n_iterations=int(sweeps),
        converged=bool(converged),
    )


def solve(problem: PenalizedProblem, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
          warm_start=None) -> LassoFit:
    """Minimize the penalized objective of ``problem`` by coordinate descent.

    Convergence is declared when the largest coefficient change in a sweep
    falls below ``tol * max(1, max|w|)``.  Non-convergence returns a fit with
    ``converged=False`` and issues a ``ConvergenceWarning``.
    """
    if problem.lam is None:
        raise ValueError("problem has no lambda; use problem.with_lambda(...)")
    _check_unpenalized_rank(problem)
    g = _Gram.of(problem.design, problem.response, problem.penalty_factor)
    w = np.zeros(problem.q) if warm_start is None else np.array(warm_start, dtype=float)
    sweeps, converged = g.run(w, problem.lam, tol, max_iter)
    return _make_fit(problem, w, sweeps, converged, max_iter)


def lambda_max(problem: PenalizedProblem) -> float:
    """Smallest lambda at which every penalized coefficient is zero.

    Unpenalized columns are first projected out of the response, so the
    definition holds with or without them.
    """
    pf = problem.penalty_factor
    pen = pf > 0
    if not pen.any():
        raise SolverError("nothing to tune: all penalty factors are zero")
    y = problem.response
    A = problem.design
    free = ~pen
    if free.any():
        coef, *_ = np.linalg.lstsq(A[:, free], y, rcond=None)
        y = y - A[:, free] @ coef
    score = np.abs(A[:, pen].T @ y) / problem.n
    return float(np.max(score / pf[pen]))


def lambda_path(problem: PenalizedProblem, n_lambdas=N_LAMBDAS, ratio=LAMBDA_RATIO):
    """Descending geometric grid from ``lambda_max`` down to ``ratio * lambda_max``."""
    if n_lambdas < 1:
        raise ValueError("n_lambdas must be positive")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    lmax = lambda_max(problem)
    if lmax <= 0:
        # response orthogonal to every penalized column; any positive grid is fine
        lmax = np.finfo(float).tiny ** 0.5
    if n_lambdas == 1:
        return np.array([lmax])
    return lmax * ratio ** (np.arange(n_lambdas) / (n_lambdas - 1))


def solve_path(problem: PenalizedProblem, grid, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Warm-started fits along a descending ``grid``; returns a list of ``LassoFit``."""
    _check_unpenalized_rank(problem)
    g = _Gram.of(problem.design, problem.response, problem.penalty_factor)
    W, sweeps, conv = g.path(np.zeros(problem.q), grid, tol, max_iter)
    return [_make_fit(problem.with_lambda(lam), W[l].copy(), sweeps[l], conv[l], max_iter)
            for l, lam in enumerate(grid)]


def make_folds(n, k, rng_seed):
    """Seeded random partition of ``range(n)`` into ``k`` near-equal folds."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n < k:
        raise DataError(f"cannot form {k} folds from {n} observations")
    perm = np.random.default_rng(rng_seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    for f, idx in enumerate(np.array_split(perm, k)):
        folds[idx] = f
    return folds


def cross_validate(problem: PenalizedProblem, k=5, n_lambdas=N_LAMBDAS, ratio=LAMBDA_RATIO,
                   rng_seed=0, one_se=False, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                   folds=None) -> CvResult:
    """k-fold cross-validation of the held-out mean squared error over the lambda path.

    ``lambda_min`` is the smallest grid value attaining the minimum mean error.
    ``lambda_chosen`` equals it unless ``one_se`` selects the 1-SE rule.
    Passing ``folds`` overrides the seeded assignment.
    """
    n = problem.n
    if folds is None:
        folds = make_folds(n, k, rng_seed)
    else:
        folds = np.asarray(folds, dtype=np.int64)
        if folds.shape != (n,):
            raise DataError("fold assignment must have one entry per observation")
        k = int(folds.max()) + 1
    grid = lambda_path(problem, n_lambdas, ratio)
    A, y, pf = problem.design, problem.response, problem.penalty_factor
    errors = np.empty((k, grid.size))
    for f in range(k):
        test = folds == f
        train = ~test
        if train.sum() < 2:
            raise DataError(f"fold {f}: fewer than 2 training observations")
        if not test.any():
            raise DataError(f"fold {f} is empty")
        g = _Gram.of(A[train], y[train], pf)
        W, _, _ = g.path(np.zeros(problem.q), grid, tol, max_iter)
        R = y[test][:, None] - A[test] @ W.T
        errors[f] = np.mean(R * R, axis=0)
    mean = errors.mean(axis=0)
    se = errors.std(axis=0, ddof=1) / np.sqrt(k)
    best = np.flatnonzero(mean == mean.min())[-1]
    lam_min = float(grid[best])
    if one_se:
        ok = np.flatnonzero(mean <= mean[best] + se[best])
        chosen = float(grid[ok[0]])
    else:
        chosen = lam_min
    return CvResult(grid, mean, se, lam_min, chosen, folds, "1se" if one_se else "min")


def fit_cv(problem: PenalizedProblem, k=5, rng_seed=0, one_se=False,
           n_lambdas=N_LAMBDAS, ratio=LAMBDA_RATIO, tol=DEFAULT_TOL,
           max_iter=DEFAULT_MAX_ITER, folds=None):
    """Cross-validate, then fit the full data at ``lambda_chosen``.

    The final fit is warm-started along the grid down to the chosen lambda.
    Returns ``(LassoFit, CvResult)``.
    """
    cv = cross_validate(problem, k=k, n_lambdas=n_lambdas, ratio=ratio, rng_seed=rng_seed,
                        one_se=one_se, tol=tol, max_iter=max_iter, folds=folds)
    stop = int(np.flatnonzero(cv.lambda_grid == cv.lambda_chosen)[0])
    fits = solve_path(problem, cv.lambda_grid[: stop + 1], tol=tol, max_iter=max_iter)
    return fits[-1], cv
