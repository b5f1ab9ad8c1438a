"""Surrogate losses for the conditional-difference 0-1 loss and the minimax risk."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .domain import Dataset

_LOG1PE = math.log1p(math.e)
# exp overflows float64 just above 709.78
EXP_SATURATION = 700.0


class SurrogateLoss(enum.Enum):
    DOUBLE_INDICATOR = "double_indicator"
    HINGE = "hinge"
    SQUARED = "squared"
    SCALED_LOGISTIC = "scaled_logistic"
    EXPONENTIAL = "exponential"


class SaturationWarning(RuntimeWarning):
    """The exponential surrogate was saturated to +inf."""


def double_indicator(z):
    z = np.asarray(z, dtype=float)
    return (z >= 0).astype(float) + (z >= 1).astype(float)


def _exponential(z):
    z = np.asarray(z, dtype=float)
    big = z > EXP_SATURATION
    if np.any(big):
        warnings.warn("exponential surrogate saturated to inf", SaturationWarning, stacklevel=3)
    with np.errstate(over="ignore"):
        return np.where(big, np.inf, np.exp(np.minimum(z, EXP_SATURATION)))


_FUNCS: dict[SurrogateLoss, Callable] = {
    SurrogateLoss.DOUBLE_INDICATOR: double_indicator,
    SurrogateLoss.HINGE: lambda z: np.maximum(0.0, 1.0 + np.asarray(z, dtype=float)),
    SurrogateLoss.SQUARED: lambda z: (1.0 + np.asarray(z, dtype=float)) ** 2,
    SurrogateLoss.SCALED_LOGISTIC: lambda z: 2.0 * np.logaddexp(0.0, np.asarray(z, dtype=float)) / _LOG1PE,
    SurrogateLoss.EXPONENTIAL: _exponential,
}


def surrogate_value(loss: SurrogateLoss, z):
    """Evaluate ``loss`` at ``z`` (scalar or array).

    Exponential values above ``z = 700`` are returned as ``inf`` with a
    :class:`SaturationWarning`.
    """
    out = _FUNCS[SurrogateLoss(loss)](z)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ValidityCheck:
    passed: bool
    first_violation: float | None = None
    n_points: int = 0


def check_surrogate_validity(
    loss: SurrogateLoss | Callable,
    z_min: float = -10.0,
    z_max: float = 10.0,
    step: float = 1e-3,
) -> ValidityCheck:
    """Certify ``l(z) >= 1[z >= 0] + 1[z >= 1]`` on a grid plus the breakpoints.

    ``loss`` may also be any vectorized callable, which is how counterexamples
    are checked.
    """
    if not z_min < z_max:
        raise ValueError("z_min must be < z_max")
    if not step > 0:
        raise ValueError("step must be positive")
    n = int(math.floor((z_max - z_min) / step + 1e-9)) + 1
    grid = z_min + step * np.arange(n)
    z = np.unique(np.concatenate([grid, [0.0, 1.0]]))
    fn = loss if callable(loss) and not isinstance(loss, SurrogateLoss) else _FUNCS[SurrogateLoss(loss)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaturationWarning)
        values = np.asarray(fn(z), dtype=float)
    bad = values < double_indicator(z) - 1e-12
    if np.any(bad):
        return ValidityCheck(False, float(z[np.argmax(bad)]), len(z))
    return ValidityCheck(True, None, len(z))


@dataclass(frozen=True)
class RiskPair:
    treatment_risk: float
    control_risk: float

    @property
    def minimax(self) -> float:
        return max(self.treatment_risk, self.control_risk)

    @property
    def total(self) -> float:
        return self.treatment_risk + self.control_risk


def minimax_risk(h_values, dataset: Dataset, loss: SurrogateLoss = SurrogateLoss.HINGE) -> RiskPair:
    """Treatment risk, ratio-weighted control risk and their max.

    ``h_values`` are predictions aligned with ``dataset.units``.
    """
    h = np.asarray(h_values, dtype=float)
    if h.shape != (len(dataset),):
        raise ValueError(f"expected {len(dataset)} predictions, got shape {h.shape}")
    if np.any(np.isnan(h)):
        raise ValueError("NaN in h_values")
    t = dataset.treated
    if not t.any() or t.all():
        raise ValueError("both groups must be non-empty")
    ratios = dataset.ratios[~t]
    if np.any(np.isnan(ratios)):
        raise ValueError("every control unit needs a density ratio")
    y = dataset.y_obs
    lt = surrogate_value(loss, -h[t] * y[t])
    lc = surrogate_value(loss, h[~t] * y[~t])
    return RiskPair(float(np.mean(lt)), float(np.mean(np.asarray(lc) / ratios)))
