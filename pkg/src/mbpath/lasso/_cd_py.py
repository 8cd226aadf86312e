"""Pure-Python coordinate-descent kernel, used when the extension is unavailable.

Same update order and arithmetic as ``_cd.pyx``, so both backends return
bit-identical coefficients.
"""

import numpy as np
from scipy.linalg.lapack import dposv


def _sweeps(gram, grad, w, thresh, tol, max_iter):
    q = gram.shape[0]
    diag = gram.diagonal().tolist()
    th = thresh.tolist()
    sweeps = 0
    converged = False
    for it in range(max_iter):
        max_delta = 0.0
        max_w = 0.0
        for j in range(q):
            gjj = diag[j]
            if gjj <= 0.0:
                continue
            old = w[j]
            u = grad[j] + gjj * old
            t = th[j]
            if u > t:
                new = (u - t) / gjj
            elif u < -t:
                new = (u + t) / gjj
            else:
                new = 0.0
            if new != old:
                d = new - old
                w[j] = new
                grad -= gram[j] * d
                if abs(d) > max_delta:
                    max_delta = abs(d)
            if abs(new) > max_w:
                max_w = abs(new)
        sweeps = it + 1
        if max_delta < tol * max(max_w, 1.0):
            converged = True
            break
    return sweeps, converged


def _polish(gram, corr, grad, w, thresh):
    """Exact minimizer for the current sign pattern; applied only if it is optimal."""
    act = np.flatnonzero(w)
    if act.size == 0:
        return False
    s = np.where(w[act] > 0, 1.0, -1.0)
    rhs = corr[act] - thresh[act] * s
    # the compiled kernel hands LAPACK a row-major buffer, i.e. the transpose
    _, x, info = dposv(gram[np.ix_(act, act)].T, rhs, lower=1)
    if info != 0:
        return False
    if np.any(x == 0) or np.any((x > 0) != (s > 0)):
        return False
    # accumulate column by column, in the compiled kernel's order
    trial = corr.copy()
    for i, j in enumerate(act):
        trial -= gram[:, j] * x[i]
    inactive = w == 0
    if np.any(np.abs(trial[inactive]) > thresh[inactive]):
        return False
    grad[:] = trial
    w[:] = 0.0
    w[act] = x
    return True


def cd_solve(gram, corr, w, thresh, tol, max_iter):
    """Cyclic coordinate descent on 0.5 w'Gw - c'w + sum_j thresh_j |w_j|.

    ``w`` is updated in place.  Returns ``(n_sweeps, converged)``.
    """
    grad = corr - gram @ w
    return _sweeps(gram, grad, w, thresh, tol, max_iter)


def cd_path(gram, corr, w, penalty, grid, tol, max_iter, polish_after):
    """Warm-started coordinate descent along ``grid`` (thresholds lam * penalty).

    If a lambda is not converged after ``polish_after`` sweeps, the exact
    active-set solution is tried, and again after every further
    ``polish_after`` sweeps.  ``w`` ends at the last solution.  Returns
    ``(W, sweeps, converged)`` with one row per lambda.
    """
    L = len(grid)
    W = np.empty((L, gram.shape[0]))
    sweeps = np.zeros(L, dtype=np.int_)
    conv = np.zeros(L, dtype=bool)
    grad = corr - gram @ w
    for l, lam in enumerate(grid):
        thresh = lam * penalty
        done, ok = 0, False
        while not ok and done < max_iter:
            if done > 0:
                _polish(gram, corr, grad, w, thresh)
            more, ok = _sweeps(gram, grad, w, thresh, tol, min(polish_after, max_iter - done))
            done += more
        sweeps[l] = done
        conv[l] = ok
        W[l] = w
    return W, sweeps, conv
