"""Minimax hinge-loss SVM for conditional treatment-effect signs.

The model minimizes

    max( mean_T hinge(1 - h(x_i) y_i),  mean_C hinge(1 + h(x_j) y_j) / ratio_j )
        + gamma * <w, w>

over ``h(x) = w0 + <w, phi(x)>`` by solving its dual, a single QP over the
treatment coefficients ``lam``, the control coefficients ``eta`` and the group
weight ``alpha`` (``beta = 1 - alpha``). Stationarity of the Lagrangian gives

    w = (1 / 2 gamma) * (sum_T lam_i y_i phi(x_i) - sum_C eta_j y_j phi(x_j))

which is how decision values are computed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import Dataset, EffectLabel, make_unit
from .kernels import KernelSpec, gram_matrix, kernel_matrix, sign_vector, signed_gram
from .qp import QpProblem, QpSolution, QpStatus, solve_qp

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
CS = "complementary-slackness"
LINE_SEARCH = "primal-line-search"


class TrainingError(RuntimeError):
    """Training could not produce a certified model."""


class DualityGapError(TrainingError):
    def __init__(self, primal: float, dual: float, limit: float):
        super().__init__(
            f"duality gap {primal - dual:.3g} exceeds {limit:.3g} "
            f"(primal {primal:.10g}, dual {dual:.10g})"
        )
        self.primal = primal
        self.dual = dual


@dataclass(frozen=True, eq=False)
class CausalSvmModel:
    train: Dataset
    lam: np.ndarray
    eta: np.ndarray
    alpha: float
    w0: float
    gamma: float
    kernel: KernelSpec
    dual_objective: float
    primal_objective: float
    intercept_method: str = CS
    info: dict = field(default_factory=dict, compare=False)

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha

    @property
    def duality_gap(self) -> float:
        return self.primal_objective - self.dual_objective

    @property
    def dim(self) -> int:
        return self.train.dim

    @property
    def expansion(self) -> np.ndarray:
        """Coefficients ``c`` with ``h(x) = w0 + sum_k c_k K(x_k, x)``."""
        u = np.concatenate([self.lam, self.eta])
        return u * sign_vector(self.train) / (2.0 * self.gamma)

    def decision_values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} features, got {X.shape[1]}")
        c = self.expansion
        nz = np.flatnonzero(c)
        if nz.size == 0:
            return np.full(X.shape[0], float(self.w0))
        return self.w0 + kernel_matrix(self.kernel, X, self.train.X[nz]) @ c[nz]


# -- dual assembly -----------------------------------------------------------


def _check_inputs(dataset: Dataset, gamma: float) -> np.ndarray:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if not dataset.is_canonical:
        raise ValueError("dataset must be canonical (treatment units first)")
    if dataset.n_t < 1 or dataset.n_c < 1:
        raise ValueError("both treatment and control units are required")
    ratios = dataset.ratios[~dataset.treated]
    if np.any(np.isnan(ratios)):
        raise ValueError("every control unit needs a density ratio")
    if np.any(ratios <= 0):
        raise ValueError("density ratios must be positive")
    return ratios


def assemble_dual(dataset: Dataset, kernel: KernelSpec, gamma: float, K=None) -> QpProblem:
    """Dual problem in minimization form over ``v = (lam, eta, alpha)``.

    ``beta`` is eliminated as ``1 - alpha``; the coupled upper bounds
    ``lam_i <= alpha / n_T`` and ``eta_j <= (1 - alpha) / (n_C ratio_j)`` are
    linear inequalities in ``v``.
    """
    ratios = _check_inputs(dataset, gamma)
    n_t, n_c = dataset.n_t, dataset.n_c
    n = n_t + n_c
    if K is None:
        K = gram_matrix(kernel, dataset)
    S = signed_gram(K, dataset)

    P = np.zeros((n + 1, n + 1))
    P[:n, :n] = S / (2.0 * gamma)
    q = np.concatenate([-np.ones(n), [0.0]])

    eye = np.eye(n)
    cap = np.zeros((n, n + 1))
    cap[:, :n] = eye
    cap[:n_t, n] = -1.0 / n_t
    cap_b = np.zeros(n)
    # eta_j + alpha / (n_C r_j) <= 1 / (n_C r_j)
    cap[n_t:, n] = 1.0 / (n_c * ratios)
    cap_b[n_t:] = 1.0 / (n_c * ratios)
    nonneg = np.hstack([-eye, np.zeros((n, 1))])
    alpha_rows = np.zeros((2, n + 1))
    alpha_rows[0, n] = -1.0
    alpha_rows[1, n] = 1.0
    A = np.vstack([nonneg, cap, alpha_rows])
    b = np.concatenate([np.zeros(n), cap_b, [0.0, 1.0]])

    y = dataset.y_obs
    E = np.zeros((1, n + 1))
    E[0, :n_t] = y[:n_t]
    E[0, n_t:n] = -y[n_t:]
    return QpProblem(P=P, q=q, A=A, b=b, E=E, d=np.zeros(1))


def dual_objective(S: np.ndarray, u: np.ndarray, gamma: float) -> float:
    return float(np.sum(u) - (u @ S @ u) / (4.0 * gamma))


# -- primal side -------------------------------------------------------------


def _hinge_parts(f: np.ndarray, w0: float, dataset: Dataset, ratios: np.ndarray):
    n_t = dataset.n_t
    y = dataset.y_obs
    h = w0 + f
    t = np.maximum(0.0, 1.0 - h[:n_t] * y[:n_t])
    c = np.maximum(0.0, 1.0 + h[n_t:] * y[n_t:]) / ratios
    return float(np.mean(t)), float(np.mean(c))


def kernel_part(K: np.ndarray, dataset: Dataset, lam, eta, gamma: float) -> np.ndarray:
    """``K(w, x_k)`` at every training point."""
    u = np.concatenate([np.asarray(lam, float), np.asarray(eta, float)])
    return K @ (u * sign_vector(dataset)) / (2.0 * gamma)


def primal_objective(
    dataset: Dataset, kernel: KernelSpec, gamma: float, lam, eta, w0: float, K=None
) -> float:
    """Minimax hinge objective plus ``gamma K(w, w)`` for the expansion of ``w``."""
    ratios = _check_inputs(dataset, gamma)
    lam = np.asarray(lam, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if lam.shape != (dataset.n_t,) or eta.shape != (dataset.n_c,):
        raise ValueError("coefficient vectors do not match the dataset")
    if K is None:
        K = gram_matrix(kernel, dataset)
    f = kernel_part(K, dataset, lam, eta, gamma)
    rt, rc = _hinge_parts(f, w0, dataset, ratios)
    u = np.concatenate([lam, eta])
    # gamma K(w, w) = u' S u / (4 gamma)
    reg = float(u @ signed_gram(K, dataset) @ u) / (4.0 * gamma)
    return max(rt, rc) + reg


def line_search_intercept(f: np.ndarray, dataset: Dataset) -> float:
    """Exact minimizer over ``w0`` of the minimax hinge term with ``K(w, .)`` fixed.

    The objective is convex and piecewise linear in ``w0``; it is evaluated at
    every breakpoint and at every crossing of the two group terms. When the
    argmin is an interval its midpoint is returned (its finite end if the
    interval is unbounded).
    """
    ratios = dataset.ratios[~dataset.treated]
    n_t = dataset.n_t
    y = dataset.y_obs
    bps = np.unique(np.concatenate([y[:n_t] - f[:n_t], -y[n_t:] - f[n_t:]]))

    def terms(w):
        w = np.atleast_1d(w)
        h = w[:, None] + f[None, :]
        t = np.maximum(0.0, 1.0 - h[:, :n_t] * y[:n_t]).mean(axis=1)
        c = (np.maximum(0.0, 1.0 + h[:, n_t:] * y[n_t:]) / ratios).mean(axis=1)
        return t, c

    ext = np.concatenate([[bps[0] - 1.0], bps, [bps[-1] + 1.0]])
    t, c = terms(ext)
    g = t - c
    lo, hi = ext[:-1], ext[1:]
    g0, g1 = g[:-1], g[1:]
    cross = (g0 * g1 < 0) | ((g0 != 0) & (g1 == 0))
    crossings = lo[cross] + (hi[cross] - lo[cross]) * g0[cross] / (g0[cross] - g1[cross])
    # crossings on the outer rays, where both terms stay linear
    extra = []
    for a, b_, ga, gb in ((ext[1], ext[0], g[1], g[0]), (ext[-2], ext[-1], g[-2], g[-1])):
        slope = (gb - ga) / (b_ - a)
        if slope != 0:
            r = a - ga / slope
            if (r - a) * (b_ - a) > 0:
                extra.append(r)
    cand = np.unique(np.concatenate([bps, crossings, extra]))
    tc, cc = terms(cand)
    vals = np.maximum(tc, cc)
    best = vals.min()
    arg = cand[vals <= best + 1e-12 * (1.0 + abs(best))]
    return float(0.5 * (arg.min() + arg.max()))


def recover_intercept(
    dual: QpSolution | np.ndarray,
    dataset: Dataset,
    kernel: KernelSpec,
    gamma: float,
    tol: float | None = None,
    K=None,
) -> tuple[float, str]:
    """Intercept from complementary slackness, with a line-search fallback.

    Every treatment coefficient strictly inside ``(0, alpha / n_T)`` gives the
    candidate ``y_i - K(w, x_i)``; every control coefficient strictly inside
    ``(0, beta / (n_C r_j))`` gives ``-y_j - K(w, x_j)``. The candidates are
    averaged. Without candidates the primal objective is minimized over
    ``w0`` directly.
    """
    ratios = _check_inputs(dataset, gamma)
    v = dual.x if isinstance(dual, QpSolution) else np.asarray(dual, dtype=float)
    n_t, n_c = dataset.n_t, dataset.n_c
    lam, eta, alpha = v[:n_t], v[n_t : n_t + n_c], float(np.clip(v[-1], 0.0, 1.0))
    if K is None:
        K = gram_matrix(kernel, dataset)
    f = kernel_part(K, dataset, lam, eta, gamma)
    cap_t = alpha / n_t
    cap_c = (1.0 - alpha) / (n_c * ratios)
    if tol is None:
        tol = 1e-6 * max(cap_t, float(np.max(cap_c)), 1e-300)
    y = dataset.y_obs
    free_t = (lam > tol) & (lam < cap_t - tol)
    free_c = (eta > tol) & (eta < cap_c - tol)
    cands = np.concatenate([y[:n_t][free_t] - f[:n_t][free_t], -y[n_t:][free_c] - f[n_t:][free_c]])
    if cands.size:
        return float(np.mean(cands)), CS
    return line_search_intercept(f, dataset), LINE_SEARCH


# -- training ----------------------------------------------------------------


def train(
    dataset: Dataset,
    kernel: KernelSpec,
    gamma: float,
    tol: float = 1e-8,
    max_iter: int = 100000,
    gap_tol: float | None = None,
) -> CausalSvmModel:
    """Fit the model by solving the dual QP.

    The duality gap is certified against ``gap_tol * (1 + |primal|)`` with
    ``gap_tol`` defaulting to ``max(1e-4, 10 tol)``.
    """
    dataset = dataset.canonical()
    _check_inputs(dataset, gamma)
    K = gram_matrix(kernel, dataset)
    problem = assemble_dual(dataset, kernel, gamma, K=K)
    sol = solve_qp(problem, tol=tol, max_iter=max_iter)
    if sol.status is QpStatus.INFEASIBLE:
        raise TrainingError("dual QP reported infeasible; zero is always feasible, so the assembly is wrong")
    if sol.status is not QpStatus.OPTIMAL:
        logger.warning("dual QP stopped with status %s (residual %.3g)", sol.status.value, sol.kkt_residual)

    n_t, n_c = dataset.n_t, dataset.n_c
    lam = np.clip(sol.x[:n_t], 0.0, None)
    eta = np.clip(sol.x[n_t : n_t + n_c], 0.0, None)
    alpha = float(np.clip(sol.x[-1], 0.0, 1.0))
    v = np.concatenate([lam, eta, [alpha]])
    w0, how = recover_intercept(v, dataset, kernel, gamma, K=K)
    S = signed_gram(K, dataset)
    dual = dual_objective(S, v[:-1], gamma)
    primal = primal_objective(dataset, kernel, gamma, lam, eta, w0, K=K)
    if how == CS and primal - dual > 1e-6 * (1.0 + abs(primal)):
        # averaged slackness candidates can be off when the dual is only approximately solved
        w_ls = line_search_intercept(kernel_part(K, dataset, lam, eta, gamma), dataset)
        p_ls = primal_objective(dataset, kernel, gamma, lam, eta, w_ls, K=K)
        if p_ls < primal:
            w0, how, primal = w_ls, LINE_SEARCH, p_ls
    limit = (max(1e-4, 10.0 * tol) if gap_tol is None else gap_tol) * (1.0 + abs(primal))
    if primal - dual > limit or primal - dual < -1e-6 * (1.0 + abs(primal)):
        raise DualityGapError(primal, dual, limit)
    return CausalSvmModel(
        train=dataset,
        lam=lam,
        eta=eta,
        alpha=alpha,
        w0=w0,
        gamma=float(gamma),
        kernel=kernel,
        dual_objective=dual,
        primal_objective=primal,
        intercept_method=how,
        info={"qp_status": sol.status.value, "kkt_residual": sol.kkt_residual, "iterations": sol.iterations},
    )


def decision_value(model: CausalSvmModel, x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != model.dim:
        raise ValueError(f"expected {model.dim} features, got {x.shape[0]}")
    return float(model.decision_values(x[None, :])[0])


def label_from_value(h: float, theta: float = 1.0) -> EffectLabel:
    if h >= theta:
        return EffectLabel.POSITIVE
    if h <= -theta:
        return EffectLabel.NEGATIVE
    return EffectLabel.NEUTRAL


def predict_effect(model, x, theta: float = 1.0) -> EffectLabel:
    """Positive iff ``h(x) >= theta``, Negative iff ``h(x) <= -theta``."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    return label_from_value(decision_value(model, x), theta)


def predict_effects(model, X, theta: float = 1.0) -> list[EffectLabel]:
    if not theta > 0:
        raise ValueError("theta must be positive")
    return [label_from_value(h, theta) for h in model.decision_values(X)]


def support_vectors(model: CausalSvmModel, tol: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Indices (within each group) of units with a positive coefficient."""
    if tol is None:
        peak = max(np.max(model.lam, initial=0.0), np.max(model.eta, initial=0.0))
        tol = 1e-7 * peak
    return np.flatnonzero(model.lam > tol), np.flatnonzero(model.eta > tol)


# -- serialization -----------------------------------------------------------


def model_to_dict(model: CausalSvmModel) -> dict:
    tr = model.train
    return {
        "format_version": FORMAT_VERSION,
        "kernel": model.kernel.to_dict(),
        "gamma": model.gamma,
        "w0": model.w0,
        "alpha": model.alpha,
        "beta": model.beta,
        "lambda": model.lam.tolist(),
        "eta": model.eta.tolist(),
        "train_features": tr.X.tolist(),
        "train_labels": [u.y_obs for u in tr.units],
        "train_groups": [u.group.value for u in tr.units],
        "ratios": [u.ratio for u in tr.units],
        "objective": {
            "primal": model.primal_objective,
            "dual": model.dual_objective,
            "gap": model.duality_gap,
        },
        "intercept_method": model.intercept_method,
    }


def model_from_dict(d: dict) -> CausalSvmModel:
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")
    units = [
        make_unit(x, g, y, ratio=r)
        for x, g, y, r in zip(d["train_features"], d["train_groups"], d["train_labels"], d["ratios"])
    ]
    return CausalSvmModel(
        train=Dataset(tuple(units)),
        lam=np.asarray(d["lambda"], dtype=float),
        eta=np.asarray(d["eta"], dtype=float),
        alpha=float(d["alpha"]),
        w0=float(d["w0"]),
        gamma=float(d["gamma"]),
        kernel=KernelSpec.from_dict(d["kernel"]),
        dual_objective=float(d["objective"]["dual"]),
        primal_objective=float(d["objective"]["primal"]),
        intercept_method=d.get("intercept_method", CS),
    )


def save_model(model: CausalSvmModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def load_model(path: str | Path) -> CausalSvmModel:
    return model_from_dict(json.loads(Path(path).read_text()))
