"""Density ratios for reweighting control-group losses.

Under randomized assignment the covariate distributions of the two groups
coincide and every ratio is 1. Otherwise a logistic propensity model
``e(x) = P(T | x)`` is fitted and converted with Bayes' identity::

    mu_{X|C}(x) / mu_{X|T}(x) = ((1 - e(x)) / e(x)) * (n_T / n_C)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .domain import Dataset

logger = logging.getLogger(__name__)

DEFAULT_CLIP = 20.0


def constant_ratios(dataset: Dataset) -> Dataset:
    """Set ratio 1 on every control unit; treatment units are left as they are."""
    return dataset.with_units(u if u.is_treated else replace(u, ratio=1.0) for u in dataset.units)


@dataclass(frozen=True, eq=False)
class PropensityModel:
    """Logistic model for the probability of treatment."""

    coefficients: np.ndarray
    intercept: float
    converged: bool = True
    n_iter: int = 0

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return expit(X @ self.coefficients + self.intercept)

    def to_dict(self) -> dict:
        return {
            "coefficients": np.asarray(self.coefficients).tolist(),
            "intercept": self.intercept,
            "converged": self.converged,
            "n_iter": self.n_iter,
        }


def fit_logistic(X: np.ndarray, t: np.ndarray, l2: float, max_iter: int = 100):
    """Newton's method on ``mean(log-loss) + l2/2 * |coef|^2`` with an unpenalized intercept.

    ``t`` holds 0/1 targets. Returns ``(coef, intercept, converged, n_iter)``,
    where convergence means a gradient infinity norm of at most 1e-8.
    """
    if not l2 > 0:
        raise ValueError("l2 must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float)
    n, d = X.shape
    Z = np.hstack([X, np.ones((n, 1))])
    pen = np.full(d + 1, float(l2))
    pen[-1] = 0.0
    theta = np.zeros(d + 1)
    m = float(np.clip(t.mean(), 1e-12, 1 - 1e-12))
    theta[-1] = np.log(m / (1.0 - m))

    def grad_hess(th):
        p = expit(Z @ th)
        g = Z.T @ (p - t) / n + pen * th
        H = (Z * (p * (1.0 - p))[:, None]).T @ Z / n + np.diag(pen)
        return g, H

    def loss(th):
        s = Z @ th
        return float(np.mean(np.logaddexp(0.0, s) - t * s) + 0.5 * np.sum(pen * th**2))

    for it in range(max_iter + 1):
        g, H = grad_hess(theta)
        if np.max(np.abs(g)) <= 1e-8:
            return theta[:-1].copy(), float(theta[-1]), True, it
        if it == max_iter:
            break
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        # backtracking keeps Newton monotone far from the optimum
        f0, s = loss(theta), 1.0
        while s > 1e-10 and loss(theta - s * step) > f0:
            s *= 0.5
        theta = theta - s * step
    return theta[:-1].copy(), float(theta[-1]), False, max_iter


def fit_propensity(dataset: Dataset, l2: float = 1e-4, max_iter: int = 100) -> PropensityModel:
    """Penalized logistic regression of group membership on the features.

    If the gradient norm does not reach 1e-8 within ``max_iter`` Newton steps
    the last iterate is returned with ``converged=False``.
    """
    if not l2 > 0:
        raise ValueError("l2 must be positive")
    if dataset.n_t < 1 or dataset.n_c < 1:
        raise ValueError("both groups must be non-empty")
    coef, b, ok, it = fit_logistic(dataset.X, dataset.treated.astype(float), l2, max_iter)
    if not ok:
        logger.warning("propensity fit did not converge in %d iterations", max_iter)
    return PropensityModel(coef, b, ok, it)


def ratios_from_propensity(
    dataset: Dataset, model: PropensityModel, clip: float = DEFAULT_CLIP
) -> Dataset:
    """Fill control ratios from the propensity model, clipped into ``[1/clip, clip]``."""
    if not clip >= 1:
        raise ValueError("clip must be >= 1")
    if dataset.n_t < 1 or dataset.n_c < 1:
        raise ValueError("both groups must be non-empty")
    if np.asarray(model.coefficients).shape != (dataset.dim,):
        raise ValueError("propensity model was fitted on a different feature space")
    e = model.predict(dataset.X)
    prior = dataset.n_t / dataset.n_c
    with np.errstate(divide="ignore"):
        r = np.clip((1.0 - e) / e * prior, 1.0 / clip, clip)
    units = (u if u.is_treated else replace(u, ratio=float(ri)) for u, ri in zip(dataset.units, r))
    meta = dict(dataset.meta, ratio_clip=clip, ratio_source="propensity")
    return Dataset(tuple(units), meta)
