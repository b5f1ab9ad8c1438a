"""Hyperparameter selection by held-out minimax surrogate risk.

The score needs only observed outcomes and ratios, so model selection works
without ground-truth effects.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import Dataset
from .kernels import KernelSpec
from .surrogate import SurrogateLoss, minimax_risk
from .svm import TrainingError, train

logger = logging.getLogger(__name__)

DEFAULT_KERNELS = (
    KernelSpec.linear(),
    KernelSpec.polynomial(2),
    KernelSpec.polynomial(3),
    KernelSpec.rbf(0.05),
    KernelSpec.rbf(0.1),
)
DEFAULT_GAMMAS = (1e-8, 1e-6, 1e-4)
# scores equal to this many decimals count as ties
SCORE_DECIMALS = 10


@dataclass(frozen=True)
class CvGrid:
    kernels: tuple[KernelSpec, ...] = DEFAULT_KERNELS
    gammas: tuple[float, ...] = DEFAULT_GAMMAS
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if not self.kernels or not self.gammas:
            raise ValueError("kernel and gamma grids must be nonempty")
        if any(not g > 0 for g in self.gammas):
            raise ValueError("gammas must be positive")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")

    def configs(self) -> list[tuple[KernelSpec, float]]:
        return [(k, g) for k in self.kernels for g in self.gammas]


@dataclass(frozen=True)
class ConfigScore:
    kernel: KernelSpec
    gamma: float
    score: float
    fold_scores: tuple[float, ...]
    error: str | None = None

    @property
    def sort_key(self) -> tuple:
        s = round(self.score, SCORE_DECIMALS) if math.isfinite(self.score) else math.inf
        return (s, -self.gamma, self.kernel.complexity)


@dataclass(frozen=True)
class CvResult:
    kernel: KernelSpec
    gamma: float
    scores: tuple[ConfigScore, ...] = field(default=())

    @property
    def best(self) -> ConfigScore:
        return min(self.scores, key=lambda c: c.sort_key)


def _fingerprint(u) -> tuple:
    return (u.group.value, u.features, u.y_obs, -1.0 if u.ratio is None else u.ratio)


def stratified_folds(dataset: Dataset, folds: int, seed: int) -> np.ndarray:
    """Fold index per unit, balanced within each group.

    Units are first ordered by a content fingerprint, so the assignment does
    not depend on the input order.
    """
    if folds > min(dataset.n_t, dataset.n_c):
        raise ValueError(f"{folds} folds need at least {folds} units in each group")
    order = sorted(range(len(dataset)), key=lambda i: _fingerprint(dataset.units[i]))
    rng = np.random.default_rng(seed)
    out = np.empty(len(dataset), dtype=int)
    treated = dataset.treated
    for flag in (True, False):
        idx = np.array([i for i in order if treated[i] == flag])
        idx = idx[rng.permutation(idx.size)]
        out[idx] = np.arange(idx.size) % folds
    return out


def cv_score(
    dataset: Dataset,
    kernel: KernelSpec,
    gamma: float,
    fold_of: np.ndarray,
    loss: SurrogateLoss = SurrogateLoss.HINGE,
    tol: float = 1e-8,
) -> ConfigScore:
    scores = []
    for f in range(int(fold_of.max()) + 1):
        held = dataset.subset(np.flatnonzero(fold_of == f))
        fit = dataset.subset(np.flatnonzero(fold_of != f))
        if held.n_t < 1 or held.n_c < 1:
            raise ValueError(f"fold {f} lacks one of the groups")
        try:
            model = train(fit, kernel, gamma, tol=tol)
        except TrainingError as exc:
            logger.warning("cv: %s gamma=%g fold %d failed: %s", kernel.label, gamma, f, exc)
            return ConfigScore(kernel, gamma, math.inf, tuple(scores), str(exc))
        scores.append(minimax_risk(model.decision_values(held.X), held, loss).minimax)
    return ConfigScore(kernel, gamma, float(np.mean(scores)), tuple(scores))


def nested_cv_select(
    dataset: Dataset,
    grid: CvGrid,
    loss: SurrogateLoss = SurrogateLoss.HINGE,
    tol: float = 1e-8,
) -> CvResult:
    """Pick ``(kernel, gamma)`` minimizing the mean held-out minimax risk.

    Ties go to the larger gamma, then to the simpler kernel.
    """
    if np.any(np.isnan(dataset.ratios[~dataset.treated])):
        raise ValueError("every control unit needs a density ratio")
    fold_of = stratified_folds(dataset, grid.folds, grid.seed)
    scores = tuple(cv_score(dataset, k, g, fold_of, loss, tol) for k, g in grid.configs())
    best = min(scores, key=lambda c: c.sort_key)
    return CvResult(best.kernel, best.gamma, scores)


def write_scores(result: CvResult, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kernel", "gamma", "score", "selected"])
        for c in result.scores:
            w.writerow([c.kernel.label, repr(c.gamma), repr(c.score), int(c is result.best)])


def score_table(scores: Sequence[ConfigScore]) -> list[dict]:
    return [{"kernel": c.kernel.label, "gamma": c.gamma, "score": c.score} for c in scores]
