"""Independent optimality check for penalized least-squares fits.

Deliberately shares nothing with the coordinate-descent code: the gradient
is recomputed from the raw design and response.
"""

import numpy as np


def kkt_violation(design, response, coef, lam, penalty_factor=None):
    """Largest violation of the subgradient optimality conditions.

    For the objective (1/(2n))||y - Aw||^2 + lam * sum pf_j |w_j| with
    g_j = a_j'(y - Aw)/n:

    * unpenalized j: |g_j| must be 0
    * penalized, w_j != 0: g_j must equal lam * pf_j * sign(w_j)
    * penalized, w_j == 0: |g_j| must not exceed lam * pf_j
    """
    A = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    w = np.asarray(coef, dtype=float)
    pf = np.ones(A.shape[1]) if penalty_factor is None else np.asarray(penalty_factor, float)
    n = A.shape[0]
    g = A.T @ (y - A @ w) / n
    bound = lam * pf
    viol = np.where(
        pf == 0,
        np.abs(g),
        np.where(w != 0, np.abs(g - bound * np.sign(w)), np.maximum(np.abs(g) - bound, 0.0)),
    )
    return float(viol.max()) if viol.size else 0.0


def kkt_ok(design, response, coef, lam, penalty_factor=None, tol=1e-6):
    return kkt_violation(design, response, coef, lam, penalty_factor) <= tol
