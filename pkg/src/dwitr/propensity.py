"""Logistic treatment model and stabilized inverse-probability-of-treatment weights.

The model is fitted on analysis rows only (times with an observed outcome),
unweighted, because the outcome estimating equation touches only those times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import PersonTimeRow, as_terms, rows_design, rows_treatment
from .errors import (
    DivergenceError,
    PositivityError,
    SeparationError,
    SingleArmError,
)
from .numerics import NewtonResult, newton_maximize

# Floor on fitted probabilities inside the likelihood. Keeps the Hessian
# factorizable under separation so the iterates diverge (and get reported
# as separation) instead of dying in the linear solve.
_P_FLOOR = 1e-10


def bernoulli_loglik(design, response):
    """Log-likelihood callback (value, gradient, hessian) for a logit model."""
    X = np.asarray(design, dtype=float)
    a = np.asarray(response, dtype=float)

    def fun(theta):
        p = np.clip(expit(X @ theta), _P_FLOOR, 1.0 - _P_FLOOR)
        value = float(np.sum(a * np.log(p) + (1.0 - a) * np.log1p(-p)))
        grad = X.T @ (a - p)
        hess = -(X * (p * (1.0 - p))[:, None]).T @ X
        return value, grad, hess

    return fun


@dataclass(frozen=True)
class PropensityFit:
    """Fitted treatment model: coefficients (intercept first) and the
    marginal treated fraction used to stabilize the weights."""

    kappa: np.ndarray
    term_names: tuple[str, ...]
    terms: tuple
    marginal_p1: float
    newton: NewtonResult

    def propensities(self, rows) -> np.ndarray:
        """Fitted P(A=1 | covariates) for each row."""
        X, _ = rows_design(rows, self.terms, intercept=True)
        return expit(X @ self.kappa)


def fit_logistic(rows, spec, tol=1e-8, max_iter=50) -> PropensityFit:
    """Maximum-likelihood logistic fit of treatment on the given terms.

    Raises:
        SingleArmError: all rows share one treatment arm.
        SeparationError: the likelihood has no finite maximizer.
        SingularDesignError: rank-deficient design.
    """
    rows = list(rows)
    terms = as_terms(spec)
    a = rows_treatment(rows)
    if len(rows) == 0 or a.min() == a.max():
        raise SingleArmError("both treatment arms are required to fit a propensity model")
    X, names = rows_design(rows, terms, intercept=True)

    fun = bernoulli_loglik(X, a)
    try:
        newton = newton_maximize(fun, np.zeros(X.shape[1]), tol=tol, max_iter=max_iter)
    except DivergenceError as exc:
        raise SeparationError("perfect separation; propensity not identifiable") from exc

    return PropensityFit(
        kappa=newton.argmax,
        term_names=tuple(names),
        terms=terms,
        marginal_p1=float(a.mean()),
        newton=newton,
    )


def ipt_weights(fit: PropensityFit, rows, truncate: float | None = None) -> np.ndarray:
    """Stabilized inverse-probability-of-treatment weights.

    For a treated row the weight is P(A=1)/p_hat; for a control row,
    P(A=0)/(1-p_hat) -- the stabilized weight of the arm actually received.
    ``truncate``, if given (e.g. 0.01), clips the weights symmetrically at
    that percentile and its complement; the default is no truncation.

    Raises:
        PositivityError: a fitted probability is numerically 0 or 1
            (run check_positivity on the propensities to locate the rows).
    """
    rows = list(rows)
    p = fit.propensities(rows)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise PositivityError(
            "fitted treatment probabilities reach 0 or 1; "
            "see check_positivity for the violating rows"
        )
    a = rows_treatment(rows)
    w = np.where(a == 1, fit.marginal_p1 / p, (1.0 - fit.marginal_p1) / (1.0 - p))
    if truncate is not None:
        if not 0.0 < truncate < 0.5:
            raise ValueError("truncate must be a percentile fraction in (0, 0.5)")
        lo, hi = np.quantile(w, [truncate, 1.0 - truncate])
        w = np.clip(w, lo, hi)
    return w
