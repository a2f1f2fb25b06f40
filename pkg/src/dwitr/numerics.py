"""Shared numerical kernels: weighted least squares and damped Newton ascent.

Both model fitters (logistic treatment model, proportional-rate visit model)
maximize their likelihoods through :func:`newton_maximize`; the outcome
regression is a single :func:`solve_wls` call on the stacked design.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DivergenceError, SingularDesignError

# Rank-deficiency threshold on the condition estimate of X'WX.
GRAM_CONDITION_LIMIT = 1e12

# Newton iterates beyond this sup-norm are treated as divergence
# (in the logistic fitter this signals perfect separation).
PARAM_SUP_NORM_LIMIT = 1e6

MAX_STEP_HALVINGS = 30


@dataclass(frozen=True)
class WlsSolution:
    """Solution of a weighted least-squares problem.

    ``gram_condition_estimate`` estimates cond(X'WX) from the pivoted-QR
    diagonal of the sqrt(W)-scaled design; it is always >= 1.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    gram_condition_estimate: float


@dataclass(frozen=True)
class NewtonResult:
    argmax: np.ndarray
    objective_at_argmax: float
    iterations: int
    converged: bool
    final_gradient_norm: float


def solve_wls(design, response, weights, column_names=None) -> WlsSolution:
    """Minimize sum_i w_i (y_i - x_i'b)^2.

    Solved through a pivoted (rank-revealing) QR factorization of the
    sqrt(W)-scaled design rather than the explicit normal equations, so
    near-collinear columns (e.g. a squared term next to its linear term)
    degrade gracefully instead of silently losing precision.

    Raises:
        SingularDesignError: condition estimate of X'WX above 1e12; the
            error names the offending columns.
        ValueError: dimension mismatch, negative weights, or fewer
            positively weighted rows than columns.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    w = np.asarray(weights, dtype=float)
    if X.ndim != 2:
        raise ValueError("design must be a 2-d matrix")
    n, p = X.shape
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError(f"design is {n}x{p} but response/weights have shapes {y.shape}/{w.shape}")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    n_pos = int(np.count_nonzero(w > 0))
    if n_pos == 0:
        raise ValueError("at least one weight must be positive")
    if p > n_pos:
        raise ValueError(f"{p} columns but only {n_pos} positively weighted rows")

    sw = np.sqrt(w)
    q, r, piv = scipy.linalg.qr(X * sw[:, None], mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    # Pivoting orders the diagonal by decreasing magnitude.
    if diag[-1] == 0.0:
        gram_cond = np.inf
    else:
        gram_cond = float((diag[0] / diag[-1]) ** 2)
    gram_cond = max(gram_cond, 1.0)
    if gram_cond > GRAM_CONDITION_LIMIT:
        cutoff = diag[0] / np.sqrt(GRAM_CONDITION_LIMIT)
        bad = piv[np.nonzero(diag <= cutoff)[0]]
        names = [column_names[j] if column_names is not None else j for j in bad]
        raise SingularDesignError("weighted design is rank deficient", columns=names)

    coef = np.empty(p)
    coef[piv] = scipy.linalg.solve_triangular(r, q.T @ (y * sw))
    return WlsSolution(
        coefficients=coef,
        residuals=y - X @ coef,
        gram_condition_estimate=gram_cond,
    )


def newton_maximize(fun, init, tol=1e-8, max_iter=50) -> NewtonResult:
    """Damped Newton ascent on a concave objective.

    ``fun(x)`` must return ``(value, gradient, hessian)``; the Hessian is
    expected to be negative definite wherever iterates land. Steps that do
    not increase the objective are halved up to 30 times; the iteration
    stops when the gradient sup-norm falls below ``tol`` or the budget is
    exhausted.

    Raises:
        ValueError: non-finite objective or gradient at ``init``, or tol <= 0.
        DivergenceError: an iterate's sup-norm exceeded 1e6.
        SingularDesignError: the Hessian could not be factorized.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    f, g, hess = fun(x)
    g = np.asarray(g, dtype=float)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise ValueError("objective or gradient is non-finite at the initial point")

    iterations = 0
    while iterations < max_iter and np.max(np.abs(g)) > tol:
        try:
            step = -np.linalg.solve(hess, g)
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError(f"singular Hessian in Newton iteration {iterations}") from exc

        alpha = 1.0
        accepted = False
        for _ in range(MAX_STEP_HALVINGS + 1):
            x_try = x + alpha * step
            if np.max(np.abs(x_try)) > PARAM_SUP_NORM_LIMIT:
                raise DivergenceError(
                    f"Newton iterate exceeded sup-norm {PARAM_SUP_NORM_LIMIT:g}"
                )
            f_try, g_try, hess_try = fun(x_try)
            if np.isfinite(f_try) and f_try > f:
                x, f, g, hess = x_try, f_try, np.asarray(g_try, dtype=float), hess_try
                accepted = True
                break
            alpha /= 2.0
        iterations += 1
        if not accepted:
            # Objective cannot be increased along the Newton direction.
            break

    grad_norm = float(np.max(np.abs(g)))
    return NewtonResult(
        argmax=x,
        objective_at_argmax=float(f),
        iterations=iterations,
        converged=grad_norm <= tol,
        final_gradient_norm=grad_norm,
    )
