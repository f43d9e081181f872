"""L1+L2-regularized logistic regression fit by proximal gradient descent.

This is the second-layer learner: it both weights the base-model score
columns and performs the sigmoid calibration. The objective is the summed
negative log-likelihood plus lambda2 * sum(beta^2) + lambda1 * sum(|beta|).
The intercept is exempt from both penalties by default; penalizing it
distorts the base rate under rare-event prevalence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class ElasticNetParams:
    lambda1: float = 0.0
    lambda2: float = 0.0
    learning_rate: float = 0.01
    max_iter: int = 100_000
    tol: float = 1e-8
    penalize_intercept: bool = False

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class ElasticNetModel:
    beta: np.ndarray  # intercept at index 0
    converged: bool = True
    n_iter: int = 0
    single_class_warning: bool = False


def _nll(z, y):
    # sum(log(1 + e^z) - y*z), numerically stable
    return float(np.logaddexp(0.0, z).sum() - (y * z).sum())


def smooth_objective(beta, X1, y, lambda2, pen_mask):
    z = X1 @ beta
    return _nll(z, y) + lambda2 * float((pen_mask * beta * beta).sum())


def smooth_gradient(beta, X1, y, lambda2, pen_mask):
    z = X1 @ beta
    return X1.T @ (expit(z) - y) + 2.0 * lambda2 * pen_mask * beta


def _objective(beta, X1, y, params, pen_mask):
    return (smooth_objective(beta, X1, y, params.lambda2, pen_mask)
            + params.lambda1 * float((pen_mask * np.abs(beta)).sum()))


def fit_elastic_net(X, y, params: ElasticNetParams) -> ElasticNetModel:
    """Proximal gradient descent with step halving on objective increase.

    A column of ones is prepended internally; callers pass raw score
    columns only. Stops when the max absolute coefficient change falls
    below tol, or at max_iter.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d matrix")
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != X.shape[0]:
        raise ValueError("X rows and y length mismatch")
    if not np.isfinite(X).all():
        raise ValueError("X contains non-finite values")
    single_class = len(np.unique(y)) < 2

    n, p = X.shape
    X1 = np.hstack([np.ones((n, 1)), X])
    pen_mask = np.ones(p + 1)
    if not params.penalize_intercept:
        pen_mask[0] = 0.0
    beta = np.zeros(p + 1)
    step = params.learning_rate
    max_step = params.learning_rate * 1024.0
    obj = _objective(beta, X1, y, params, pen_mask)
    converged = False
    it = 0
    smooth = smooth_objective(beta, X1, y, params.lambda2, pen_mask)
    for it in range(1, params.max_iter + 1):
        grad = smooth_gradient(beta, X1, y, params.lambda2, pen_mask)
        step = min(step * 2.0, max_step)  # probe a larger step; halving undoes it
        while True:
            cand = beta - step * grad
            thr = step * params.lambda1 * pen_mask
            cand = np.sign(cand) * np.maximum(np.abs(cand) - thr, 0.0)
            diff = cand - beta
            cand_smooth = smooth_objective(cand, X1, y, params.lambda2, pen_mask)
            # classical sufficient-decrease test for proximal gradient: the
            # smooth part must be below its quadratic model at this step size
            bound = smooth + grad @ diff + (diff @ diff) / (2.0 * step)
            new_obj = cand_smooth + params.lambda1 * float(
                (pen_mask * np.abs(cand)).sum())
            if (cand_smooth <= bound + 1e-12 and new_obj <= obj + 1e-12) \
                    or step < 1e-18:
                break
            step *= 0.5
        delta = float(np.max(np.abs(cand - beta)))
        beta, obj, smooth = cand, new_obj, cand_smooth
        if delta < params.tol:
            converged = True
            break
    return ElasticNetModel(beta=beta, converged=converged, n_iter=it,
                           single_class_warning=single_class)


def predict_proba(model: ElasticNetModel, X) -> np.ndarray:
    """Sigmoid of intercept + dot product; outputs strictly inside (0, 1)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.beta) - 1:
        raise ValueError(
            f"X must have {len(model.beta) - 1} columns, got shape {X.shape}")
    p = expit(model.beta[0] + X @ model.beta[1:])
    tiny = np.finfo(float).tiny
    return np.clip(p, tiny, np.nextafter(1.0, 0.0))
