"""Difference-of-two-models comparators.

One learner is fitted on the treatment units and one on the control units,
each on the observed outcome. The predicted effect is ``f_T(x) - f_C(x)``
where ``f`` is the real-valued score: the SVM margin, the ridge output or the
logistic log-odds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import Dataset
from .kernels import KernelSpec, kernel_matrix
from .qp import QpProblem, QpStatus, solve_qp
from .weights import fit_logistic

SVM = "svm"
RIDGE = "ridge"
LOGISTIC = "logistic"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LearnerKind:
    """Base learner configuration.

    ``svm`` uses the soft-margin penalty ``C``; ``ridge`` and ``logistic`` use
    ``l2``. Logistic regression is linear in the raw features.
    """

    kind: str
    kernel: KernelSpec | None = None
    C: float | None = None
    l2: float | None = None

    def __post_init__(self):
        if self.kind == SVM:
            if self.kernel is None or self.C is None or not self.C > 0:
                raise ValueError("svm needs a kernel and C > 0")
        elif self.kind == RIDGE:
            if self.kernel is None or self.l2 is None or not self.l2 > 0:
                raise ValueError("ridge needs a kernel and l2 > 0")
        elif self.kind == LOGISTIC:
            if self.l2 is None or not self.l2 > 0:
                raise ValueError("logistic needs l2 > 0")
        else:
            raise ValueError(f"unknown learner {self.kind!r}")

    @classmethod
    def svm(cls, kernel: KernelSpec, C: float | None = None, gamma: float | None = None) -> "LearnerKind":
        """Soft-margin SVM; ``C`` defaults to ``1 / (2 gamma)``."""
        if C is None:
            if gamma is None:
                raise ValueError("give C or gamma")
            C = 1.0 / (2.0 * gamma)
        return cls(SVM, kernel=kernel, C=float(C))

    @classmethod
    def ridge(cls, kernel: KernelSpec, l2: float) -> "LearnerKind":
        return cls(RIDGE, kernel=kernel, l2=float(l2))

    @classmethod
    def logistic(cls, l2: float = 1e-4) -> "LearnerKind":
        return cls(LOGISTIC, l2=float(l2))

    @property
    def label(self) -> str:
        if self.kind == LOGISTIC:
            return "2 logistic"
        return f"2 {self.kind} {self.kernel.label}"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "kernel": None if self.kernel is None else self.kernel.to_dict(),
            "C": self.C,
            "l2": self.l2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerKind":
        k = d.get("kernel")
        return cls(d["kind"], None if k is None else KernelSpec.from_dict(k), d.get("C"), d.get("l2"))


@dataclass(frozen=True, eq=False)
class FittedLearner:
    """``f(x) = intercept + sum_k coef_k K(support_k, x)``, or linear when ``kernel`` is None."""

    kind: str
    kernel: KernelSpec | None
    support: np.ndarray
    coef: np.ndarray
    intercept: float
    info: dict = field(default_factory=dict)

    def decision_values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.coef.size == 0:
            return np.full(X.shape[0], self.intercept)
        if self.kernel is None:
            return X @ self.coef + self.intercept
        return kernel_matrix(self.kernel, X, self.support) @ self.coef + self.intercept

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "kernel": None if self.kernel is None else self.kernel.to_dict(),
            "dim": int(self.support.shape[1]),
            "support": self.support.tolist(),
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedLearner":
        k = d.get("kernel")
        return cls(
            d["kind"],
            None if k is None else KernelSpec.from_dict(k),
            np.asarray(d["support"], dtype=float).reshape(len(d["support"]), int(d["dim"])),
            np.asarray(d["coef"], dtype=float),
            float(d["intercept"]),
        )


def _constant(kind: str, value: float, dim: int) -> FittedLearner:
    return FittedLearner(kind, None, np.zeros((0, dim)), np.zeros(0), float(value), {"constant": True})


def _svm_intercept(a, y, f, C) -> float:
    tol = 1e-6 * C
    free = (a > tol) & (a < C - tol)
    if free.any():
        return float(np.mean(y[free] - f[free]))
    # no free vectors: midpoint of the interval allowed by the bound ones
    g = y - f
    up = ((y > 0) & (a < C - tol)) | ((y < 0) & (a > tol))
    lo = ((y > 0) & (a > tol)) | ((y < 0) & (a < C - tol))
    lb = np.max(g[lo]) if lo.any() else np.min(g)
    ub = np.min(g[up]) if up.any() else np.max(g)
    return float(0.5 * (lb + ub))


def _fit_svm(spec: LearnerKind, X, y, tol) -> FittedLearner:
    n = len(y)
    K = kernel_matrix(spec.kernel, X, X)
    K = 0.5 * (K + K.T)
    P = K * np.outer(y, y)
    A = np.vstack([-np.eye(n), np.eye(n)])
    b = np.concatenate([np.zeros(n), np.full(n, spec.C)])
    sol = solve_qp(QpProblem(P=P, q=-np.ones(n), A=A, b=b, E=y[None, :], d=np.zeros(1)), tol=tol)
    a = np.clip(sol.x, 0.0, spec.C)
    f = K @ (a * y)
    w0 = _svm_intercept(a, y, f, spec.C)
    nz = a > 0
    info = {"qp_status": sol.status.value, "kkt_residual": sol.kkt_residual}
    if sol.status is not QpStatus.OPTIMAL:
        info["warning"] = "svm dual not solved to tolerance"
    return FittedLearner(SVM, spec.kernel, X[nz], (a * y)[nz], w0, info)


def _fit_ridge(spec: LearnerKind, X, y) -> FittedLearner:
    K = kernel_matrix(spec.kernel, X, X)
    coef = np.linalg.solve(0.5 * (K + K.T) + spec.l2 * np.eye(len(y)), y)
    return FittedLearner(RIDGE, spec.kernel, X.copy(), coef, 0.0)


def _fit_logistic(spec: LearnerKind, X, y) -> FittedLearner:
    coef, b, ok, it = fit_logistic(X, (y > 0).astype(float), spec.l2, max_iter=200)
    return FittedLearner(LOGISTIC, None, np.zeros((0, X.shape[1])), coef, b, {"converged": ok, "n_iter": it})


def train_base_learner(kind: LearnerKind, units: Dataset, seed: int = 0, tol: float = 1e-8) -> FittedLearner:
    """Fit one learner on the observed outcomes of ``units``.

    Classifiers given a single outcome class return a constant model with
    that class's sign. All fits are deterministic; ``seed`` is accepted for
    interface symmetry and recorded in ``info``.
    """
    if len(units) < 2:
        raise ValueError("need at least 2 units")
    X = np.array(units.X, dtype=float)
    y = units.y_obs.astype(float)
    if kind.kind in (SVM, LOGISTIC) and np.unique(y).size < 2:
        fitted = _constant(kind.kind, float(y[0]), X.shape[1])
    elif kind.kind == SVM:
        fitted = _fit_svm(kind, X, y, tol)
    elif kind.kind == RIDGE:
        fitted = _fit_ridge(kind, X, y)
    else:
        fitted = _fit_logistic(kind, X, y)
    fitted.info["seed"] = seed
    return fitted


@dataclass(frozen=True, eq=False)
class TwoModelPredictor:
    learner: LearnerKind
    model_t: FittedLearner
    model_c: FittedLearner

    def decision_values(self, X) -> np.ndarray:
        return self.model_t.decision_values(X) - self.model_c.decision_values(X)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "two_model": {
                "learner": self.learner.to_dict(),
                "treatment": self.model_t.to_dict(),
                "control": self.model_c.to_dict(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TwoModelPredictor":
        if d.get("format_version") != FORMAT_VERSION or "two_model" not in d:
            raise ValueError("not a two-model predictor document")
        tm = d["two_model"]
        return cls(
            LearnerKind.from_dict(tm["learner"]),
            FittedLearner.from_dict(tm["treatment"]),
            FittedLearner.from_dict(tm["control"]),
        )


def train_two_model(kind: LearnerKind, dataset: Dataset, seed: int = 0, tol: float = 1e-8) -> TwoModelPredictor:
    """Fit separate learners on the treatment and control units."""
    t = dataset.treated
    treat = dataset.subset(np.flatnonzero(t))
    ctrl = dataset.subset(np.flatnonzero(~t))
    return TwoModelPredictor(kind, train_base_learner(kind, treat, seed, tol), train_base_learner(kind, ctrl, seed, tol))


def predict_difference(predictor: TwoModelPredictor, x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    return float(predictor.decision_values(x[None, :])[0])


def save_predictor(predictor: TwoModelPredictor, path: str | Path) -> None:
    Path(path).write_text(json.dumps(predictor.to_dict(), indent=1))


def load_predictor(path: str | Path) -> TwoModelPredictor:
    return TwoModelPredictor.from_dict(json.loads(Path(path).read_text()))
