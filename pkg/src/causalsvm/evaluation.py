"""Ground-truth evaluation of effect predictions.

Two families live here. ``pointwise_loss`` scores one prediction against a
pair of potential outcomes with a fixed margin. ``quantile_neutral_loss``
implements the benchmark protocol: the given fraction of points with the
smallest ``|h|`` is declared neutral and only sign errors beyond that cut
(plus non-neutral predictions on neutral truth) count.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import Dataset, DatasetError


class LossKind(enum.Enum):
    L01 = "L01"
    LTHETA = "LTheta"
    L1 = "L1"


def _check_label(v) -> int:
    if v not in (-1, 1):
        raise ValueError(f"potential outcomes must be -1 or 1, got {v!r}")
    return int(v)


def pointwise_loss(kind: LossKind | str, h: float, y_t: int, y_c: int, theta: float | None = None) -> int:
    """0/1 loss of decision value ``h`` given potential outcomes.

    ``L1`` and ``LTheta`` count an error when the prediction lands beyond the
    wrong margin (``1`` or ``theta``); ``L01`` uses the sign for the effect
    cases. Neutral truth is an error whenever ``|h|`` reaches the margin.
    """
    kind = LossKind(kind)
    y_t, y_c = _check_label(y_t), _check_label(y_c)
    if kind is LossKind.LTHETA:
        if theta is None or not theta > 0:
            raise ValueError("LTheta needs theta > 0")
        m = float(theta)
    else:
        m = 1.0
    if y_t == y_c:
        return int(abs(h) >= m)
    cut = 0.0 if kind is LossKind.L01 else m
    if y_t > y_c:
        return int(h <= -cut)
    return int(h >= cut)


@dataclass(frozen=True)
class EvaluationReport:
    fraction_neutral: float
    threshold_t: float
    loss_percent: float
    false_positive: int
    false_negative: int
    spurious_effect: int
    n: int

    @property
    def errors(self) -> int:
        return self.false_positive + self.false_negative + self.spurious_effect

    def to_row(self) -> list:
        return [
            self.fraction_neutral,
            self.threshold_t,
            self.loss_percent,
            self.false_positive,
            self.false_negative,
            self.spurious_effect,
            self.n,
        ]


CSV_HEADER = ["fraction", "threshold", "loss_percent", "fp", "fn", "spurious", "n"]


def neutral_threshold(abs_h: np.ndarray, fraction: float) -> float:
    """Smallest ``t`` with at least ``ceil(fraction * n)`` values of ``|h|`` below it.

    For ``fraction = 0`` the threshold is the smallest positive float, so only
    exact zeros are neutral.
    """
    n = abs_h.size
    k = math.ceil(fraction * n)
    if k == 0:
        return float(np.nextafter(0.0, 1.0))
    kth = float(np.partition(abs_h, k - 1)[k - 1])
    return float(np.nextafter(kth, np.inf))


def quantile_neutral_loss(h_values, truths, fraction: float) -> EvaluationReport:
    """Loss in percent after declaring the ``fraction`` smallest ``|h|`` neutral.

    ``truths`` is a pair of arrays ``(y_t, y_c)`` or a sequence of pairs.
    """
    h = np.asarray(h_values, dtype=float).ravel()
    if h.size == 0:
        raise ValueError("empty input")
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    if np.any(np.isnan(h)):
        raise ValueError("NaN in h_values")
    tr = np.asarray(truths, dtype=float)
    if tr.shape == (h.size, 2):
        y_t, y_c = tr[:, 0], tr[:, 1]
    elif tr.shape == (2, h.size):
        y_t, y_c = tr
    else:
        raise ValueError(f"truths shape {tr.shape} does not match {h.size} predictions")
    if not np.all(np.isin(y_t, (-1, 1)) & np.isin(y_c, (-1, 1))):
        raise ValueError("potential outcomes must be -1 or 1")
    t = neutral_threshold(np.abs(h), fraction)
    fn = int(np.sum((y_t > y_c) & (h <= -t)))
    fp = int(np.sum((y_t < y_c) & (h >= t)))
    sp = int(np.sum((y_t == y_c) & (np.abs(h) >= t)))
    n = h.size
    return EvaluationReport(float(fraction), t, 100.0 * (fp + fn + sp) / n, fp, fn, sp, n)


def evaluate_model(predictor, test: Dataset, fractions: Sequence[float] = (0.01, 0.1)) -> list[EvaluationReport]:
    """One report per neutral fraction for any object with ``decision_values(X)``."""
    if not test.has_truth:
        raise DatasetError("test set lacks ground-truth potential outcomes")
    y_t, y_c = test.truths()
    h = predictor.decision_values(test.X)
    return [quantile_neutral_loss(h, (y_t, y_c), f) for f in fractions]


def write_reports(reports: Sequence[EvaluationReport], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in reports:
            w.writerow(r.to_row())
