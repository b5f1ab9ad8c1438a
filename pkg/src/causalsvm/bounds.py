"""Generalization-bound calculators for the minimax risk.

All logarithms are natural except where a quantity is explicitly in bits.
The distribution-mismatch factor is ``d2(P||Q) = 2 ** KL_bits(P||Q)``, which
equals ``exp(KL_nats(P||Q))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoundInputs:
    """Everything the bound needs besides the empirical risks.

    ``growth_log`` is the natural log of the growth function at ``2 n_t``;
    ``pdim`` the pseudo-dimension; ``M`` the supremum of the surrogate loss.
    """

    n_t: int
    n_c: int
    delta: float
    pdim: int
    growth_log: float
    d2: float = 1.0
    M: float = 1.0

    def __post_init__(self):
        if self.n_t < 1 or self.n_c < 1:
            raise ValueError("group sizes must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.pdim < 1 or self.n_c < self.pdim:
            raise ValueError("need 1 <= pdim <= n_c")
        if self.growth_log < 0:
            raise ValueError("growth_log must be nonnegative")
        if not self.d2 >= 1.0:
            raise ValueError("d2 must be >= 1")
        if not self.M >= 1.0:
            raise ValueError("M must be >= 1")


def delta_t(n_t: int, delta: float, growth_log: float) -> float:
    """Treatment deviation ``2 sqrt(2 (growth_log + ln(4/delta)) / n_t)``."""
    if n_t < 1 or not delta > 0:
        raise ValueError("need n_t >= 1 and delta > 0")
    return 2.0 * math.sqrt(2.0 * (growth_log + math.log(4.0 / delta)) / n_t)


def delta_c(n_c: int, delta: float, pdim: int, d2: float) -> float:
    """Control deviation ``2^(5/4) sqrt(d2) ((p ln(2 e n_c / p) + ln(4/delta)) / n_c)^(3/8)``."""
    if pdim < 1 or n_c < pdim:
        raise ValueError("need n_c >= pdim >= 1")
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not d2 >= 1.0:
        raise ValueError("d2 must be >= 1")
    inner = (pdim * math.log(2.0 * n_c * math.e / pdim) + math.log(4.0 / delta)) / n_c
    return 2.0**1.25 * math.sqrt(d2) * inner**0.375


def sauer_growth_log(dim: int, m: int) -> float:
    """Natural log of Sauer's bound on the growth function at ``m`` points.

    ``dim * ln(e m / dim)`` for ``m >= dim``; below that the trivial ``m ln 2``.
    """
    if dim < 1 or m < 1:
        raise ValueError("dim and m must be positive")
    if m < dim:
        return m * math.log(2.0)
    return dim * math.log(math.e * m / dim)


def generalization_bound(r_hat_t: float, r_hat_c: float, inputs: BoundInputs) -> float:
    """``M (max(r_t, r_c) + max(delta_t(delta/2), delta_c(delta/2)))``.

    The empirical risks are those of the loss rescaled by ``1/M``.
    """
    h = inputs.delta / 2.0
    dev = max(delta_t(inputs.n_t, h, inputs.growth_log), delta_c(inputs.n_c, h, inputs.pdim, inputs.d2))
    return inputs.M * (max(r_hat_t, r_hat_c) + dev)


# -- d2 ----------------------------------------------------------------------


def gaussian_kl_nats(mu_p, cov_p, mu_q, cov_q) -> float:
    """KL(N(mu_p, cov_p) || N(mu_q, cov_q)) in nats."""
    mu_p = np.atleast_1d(np.asarray(mu_p, dtype=float))
    mu_q = np.atleast_1d(np.asarray(mu_q, dtype=float))
    cov_p = np.atleast_2d(np.asarray(cov_p, dtype=float))
    cov_q = np.atleast_2d(np.asarray(cov_q, dtype=float))
    k = mu_p.size
    try:
        Lp = np.linalg.cholesky(cov_p)
        Lq = np.linalg.cholesky(cov_q)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc
    A = np.linalg.solve(Lq, Lp)
    diff = np.linalg.solve(Lq, mu_q - mu_p)
    logdet = 2.0 * (np.sum(np.log(np.diag(Lq))) - np.sum(np.log(np.diag(Lp))))
    return float(0.5 * (np.sum(A * A) + diff @ diff - k + logdet))


def gaussian_d2(mu_p, cov_p, mu_q, cov_q) -> float:
    """``2 ** KL_bits`` between two Gaussians, i.e. ``exp(KL_nats)``."""
    return math.exp(max(gaussian_kl_nats(mu_p, cov_p, mu_q, cov_q), 0.0))


@dataclass(frozen=True)
class GaussianParametric:
    """Fit a normal to each group; covariances get ``ridge * I`` added."""

    ridge: float = 1e-6


@dataclass(frozen=True)
class UserSupplied:
    value: float

    def __post_init__(self):
        if not self.value >= 1.0:
            raise ValueError("d2 must be >= 1")


def estimate_d2(treatment_features, control_features, estimator=GaussianParametric()) -> float:
    """``d2`` of the treatment covariate law relative to the control one."""
    if isinstance(estimator, UserSupplied):
        return float(estimator.value)
    if not isinstance(estimator, GaussianParametric):
        raise TypeError(f"unknown estimator {estimator!r}")
    Xt = np.atleast_2d(np.asarray(treatment_features, dtype=float))
    Xc = np.atleast_2d(np.asarray(control_features, dtype=float))
    d = Xt.shape[1]
    if Xc.shape[1] != d:
        raise ValueError("feature dimensions differ")
    if Xt.shape[0] < d + 2 or Xc.shape[0] < d + 2:
        raise ValueError(f"need at least {d + 2} points per group")
    eye = estimator.ridge * np.eye(d)
    cov_t = np.cov(Xt, rowvar=False).reshape(d, d) + eye
    cov_c = np.cov(Xc, rowvar=False).reshape(d, d) + eye
    return gaussian_d2(Xt.mean(axis=0), cov_t, Xc.mean(axis=0), cov_c)
