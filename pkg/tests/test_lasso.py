import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mbpath.errors import ConvergenceWarning, DataError, SolverError
from mbpath.lasso import (BACKEND, PenalizedProblem, cross_validate, fit_cv, kkt_violation,
                          lambda_max, lambda_path, make_folds, soft_threshold, solve,
                          solve_path)
from mbpath.lasso import _kernel

from oracles import lasso_brute_force, random_lasso_problem


def random_problem(seed, n, q, n_free=0):
    return random_lasso_problem(np.random.default_rng(seed), n, q, n_free)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(0, 2),
       st.floats(0.02, 0.9))
def test_matches_brute_force(seed, q, n_free, frac):
    n_free = min(n_free, q - 1)
    A, y, pf = random_problem(seed, 4 * q + 8, q, n_free)
    prob = PenalizedProblem(y, A, pf)
    lam = frac * lambda_max(prob)
    fit = solve(prob.with_lambda(lam))
    w_ref, obj_ref = lasso_brute_force(A, y, pf, lam)
    assert fit.converged
    assert fit.objective_value <= obj_ref + 1e-10
    np.testing.assert_allclose(fit.coefficients, w_ref, atol=1e-6)


def test_soft_threshold():
    np.testing.assert_array_equal(soft_threshold(np.array([-3.0, -0.5, 0.0, 0.5, 3.0]), 1.0),
                                  [-2.0, 0.0, 0.0, 0.0, 2.0])
    with pytest.raises(ValueError):
        soft_threshold(1.0, -1.0)


def test_lambda_max_gives_zero_and_is_tight():
    A, y, pf = random_problem(3, 40, 8, n_free=2)
    prob = PenalizedProblem(y, A, pf)
    lmax = lambda_max(prob)
    at = solve(prob.with_lambda(lmax)).coefficients
    assert np.all(at[2:] == 0)
    below = solve(prob.with_lambda(0.99 * lmax)).coefficients
    assert np.any(below[2:] != 0)


def test_lambda_path_shape():
    A, y, pf = random_problem(4, 30, 5)
    prob = PenalizedProblem(y, A, pf)
    grid = lambda_path(prob, 100, 0.01)
    assert grid.size == 100
    assert np.isclose(grid[0], lambda_max(prob)) and np.isclose(grid[-1], 0.01 * grid[0])
    assert np.all(np.diff(grid) < 0)
    with pytest.raises(ValueError):
        lambda_path(prob, 10, 1.5)


def test_kkt_along_path():
    A, y, pf = random_problem(5, 60, 30, n_free=3)
    prob = PenalizedProblem(y, A, pf)
    grid = lambda_path(prob, 50, 0.01)
    for fit in solve_path(prob, grid):
        assert fit.converged
        assert kkt_violation(A, y, fit.coefficients, fit.lam, pf) < 1e-6


def test_high_dimensional_kkt():
    A, y, pf = random_problem(6, 40, 150)
    prob = PenalizedProblem(y, A, pf)
    for frac in (0.5, 0.1, 0.02):
        fit = solve(prob.with_lambda(frac * lambda_max(prob)))
        assert kkt_violation(A, y, fit.coefficients, fit.lam, pf) < 1e-6


def test_warm_start_reaches_same_point():
    A, y, pf = random_problem(7, 50, 10)
    prob = PenalizedProblem(y, A, pf).with_lambda(0.05)
    cold = solve(prob)
    warm = solve(prob, warm_start=np.ones(10))
    np.testing.assert_allclose(warm.coefficients, cold.coefficients, atol=1e-7)


def test_non_convergence_warns():
    A, y, pf = random_problem(8, 30, 20)
    prob = PenalizedProblem(y, A, pf).with_lambda(0.001)
    with warnings.catch_warnings():
        warnings.simplefilter("always", ConvergenceWarning)
        with pytest.warns(ConvergenceWarning):
            fit = solve(prob, max_iter=1)
    assert not fit.converged and fit.n_iterations == 1


@pytest.mark.parametrize("kernel", ["python", "selected"])
def test_sweeps_never_increase_objective(kernel):
    solve_fn = _kernel.python_cd_solve if kernel == "python" else _kernel.cd_solve
    rng = np.random.default_rng(9)
    A = rng.standard_normal((30, 12))
    A[:, 1] = A[:, 0] + 0.1 * rng.standard_normal(30)
    y = rng.standard_normal(30)
    G = np.ascontiguousarray(A.T @ A / 30)
    c = A.T @ y / 30
    thresh = np.full(12, 0.05)
    w = np.zeros(12)

    def obj(w):
        return 0.5 * w @ G @ w - c @ w + thresh @ np.abs(w)

    prev = obj(w)
    for _ in range(200):
        solve_fn(G, c, w, thresh, 0.0, 1)
        cur = obj(w)
        assert cur <= prev + 1e-14
        prev = cur


@pytest.mark.skipif(BACKEND != "cython", reason="compiled kernel not built")
def test_backends_bit_identical():
    A, y, pf = random_problem(10, 50, 80)
    n = A.shape[0]
    G = np.ascontiguousarray(A.T @ A / n)
    c = A.T @ y / n
    grid = lambda_path(PenalizedProblem(y, A, pf), 60, 0.01)
    w1, w2 = np.zeros(80), np.zeros(80)
    W1, s1, c1 = _kernel.cd_path(G, c, w1, pf, grid, 1e-7, 100_000, 10)
    W2, s2, c2 = _kernel.python_cd_path(G, c, w2, pf, grid, 1e-7, 100_000, 10)
    np.testing.assert_array_equal(W1, W2)
    np.testing.assert_array_equal(s1, s2)
    np.testing.assert_array_equal(c1, c2)
    v1, v2 = np.zeros(80), np.zeros(80)
    r1 = _kernel.cd_solve(G, c, v1, 0.02 * pf, 1e-7, 1000)
    r2 = _kernel.python_cd_solve(G, c, v2, 0.02 * pf, 1e-7, 1000)
    assert r1 == r2
    np.testing.assert_array_equal(v1, v2)


def test_all_unpenalized_is_least_squares():
    A, y, _ = random_problem(11, 20, 3)
    fit = solve(PenalizedProblem(y, A, np.zeros(3)).with_lambda(1.0))
    np.testing.assert_allclose(fit.coefficients, np.linalg.lstsq(A, y, rcond=None)[0])
    with pytest.raises(SolverError):
        lambda_max(PenalizedProblem(y, A, np.zeros(3)))


def test_rank_deficient_free_block():
    A, y, pf = random_problem(12, 20, 4, n_free=2)
    A[:, 1] = 2 * A[:, 0]
    with pytest.raises(SolverError):
        solve(PenalizedProblem(y, A, pf).with_lambda(0.1))


def test_problem_validation():
    with pytest.raises(DataError):
        PenalizedProblem(np.zeros(3), np.zeros((4, 2)))
    with pytest.raises(DataError):
        PenalizedProblem(np.zeros(4), np.zeros((4, 2)), penalty_factor=[-1.0, 1.0])
    with pytest.raises(ValueError):
        solve(PenalizedProblem(np.zeros(4), np.zeros((4, 2))))


def test_make_folds():
    f = make_folds(23, 5, 1)
    assert sorted(np.bincount(f)) == [4, 4, 5, 5, 5]
    np.testing.assert_array_equal(f, make_folds(23, 5, 1))
    assert not np.array_equal(f, make_folds(23, 5, 2))
    with pytest.raises(DataError):
        make_folds(3, 5, 0)
    with pytest.raises(ValueError):
        make_folds(10, 1, 0)


def test_cross_validate_against_direct_computation():
    A, y, pf = random_problem(13, 40, 10, n_free=1)
    prob = PenalizedProblem(y, A, pf)
    cv = cross_validate(prob, k=4, n_lambdas=12, rng_seed=3)
    errors = np.empty((4, 12))
    for f in range(4):
        tr, te = cv.fold_assignment != f, cv.fold_assignment == f
        sub = PenalizedProblem(y[tr], A[tr], pf)
        for l, lam in enumerate(cv.lambda_grid):
            w = solve(sub.with_lambda(lam)).coefficients
            errors[f, l] = np.mean((y[te] - A[te] @ w) ** 2)
    np.testing.assert_allclose(cv.mean_cv_error, errors.mean(0), rtol=1e-6)
    np.testing.assert_allclose(cv.se_cv_error, errors.std(0, ddof=1) / 2, rtol=1e-5)
    best = np.flatnonzero(cv.mean_cv_error == cv.mean_cv_error.min())[-1]
    assert cv.lambda_min == cv.lambda_grid[best] == cv.lambda_chosen


def test_one_se_rule():
    A, y, pf = random_problem(14, 40, 10)
    prob = PenalizedProblem(y, A, pf)
    cv = cross_validate(prob, k=5, n_lambdas=30, rng_seed=0, one_se=True)
    assert cv.rule == "1se"
    assert cv.lambda_chosen >= cv.lambda_min
    j = np.flatnonzero(cv.lambda_grid == cv.lambda_min)[0]
    ok = cv.mean_cv_error <= cv.mean_cv_error[j] + cv.se_cv_error[j]
    assert cv.lambda_chosen == cv.lambda_grid[np.flatnonzero(ok)[0]]


def test_custom_folds_validated():
    A, y, pf = random_problem(15, 10, 3)
    prob = PenalizedProblem(y, A, pf)
    with pytest.raises(DataError, match="one entry per observation"):
        cross_validate(prob, folds=np.zeros(5))
    with pytest.raises(DataError, match="fewer than 2 training"):
        cross_validate(prob, folds=np.array([0] * 9 + [1]))


def test_fit_cv_returns_chosen_fit():
    A, y, pf = random_problem(16, 50, 20)
    prob = PenalizedProblem(y, A, pf)
    fit, cv = fit_cv(prob, k=5, rng_seed=1)
    assert fit.lam == cv.lambda_chosen
    assert kkt_violation(A, y, fit.coefficients, fit.lam, pf) < 1e-6
