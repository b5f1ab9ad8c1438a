"""Dense convex quadratic programming with KKT certification.

Problems have the form::

    minimize    0.5 x'Px + q'x
    subject to  A x <= b
                E x  = d

and are solved by a Mehrotra predictor-corrector interior-point method on a
Ruiz-equilibrated copy of the problem, followed by an active-set polishing
step on the original data. The polish solves the equality-constrained KKT
system of the identified active set and is kept only when it improves the
certified residuals.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

logger = logging.getLogger(__name__)

PSD_TOL = 1e-8


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"


class QpError(ValueError):
    """Malformed problem data."""


def _as_matrix(M, n: int) -> np.ndarray:
    if M is None:
        return np.zeros((0, n))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros((0, n))
    return M


def _as_vector(v, m: int) -> np.ndarray:
    if v is None:
        return np.zeros(m)
    return np.atleast_1d(np.asarray(v, dtype=float)).ravel()


@dataclass(frozen=True, eq=False)
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    E: np.ndarray | None = None
    d: np.ndarray | None = None

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        n = P.shape[0]
        q = _as_vector(self.q, n)
        A, E = _as_matrix(self.A, n), _as_matrix(self.E, n)
        b, d = _as_vector(self.b, A.shape[0]), _as_vector(self.d, E.shape[0])
        if P.shape != (n, n) or q.shape != (n,):
            raise QpError(f"P must be square and q of matching length, got {P.shape}, {q.shape}")
        if A.shape[1] != n or E.shape[1] != n:
            raise QpError("constraint matrices must have one column per variable")
        if b.shape != (A.shape[0],) or d.shape != (E.shape[0],):
            raise QpError("row counts of A/b and E/d must match")
        scale = max(1.0, float(np.max(np.abs(P)))) if P.size else 1.0
        if not np.allclose(P, P.T, rtol=0.0, atol=1e-12 * scale):
            raise QpError("P must be symmetric")
        if n and np.linalg.eigvalsh(P)[0] < -PSD_TOL * max(1.0, np.linalg.norm(P, 2)):
            raise QpError("P must be positive semidefinite")
        for name, v in (("P", P), ("q", q), ("A", A), ("b", b), ("E", E), ("d", d)):
            if not np.all(np.isfinite(v)):
                raise QpError(f"{name} contains non-finite values")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m_ineq(self) -> int:
        return self.A.shape[0]

    @property
    def m_eq(self) -> int:
        return self.E.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass(frozen=True)
class KktResiduals:
    """Max-norm KKT residuals, absolute and scale-normalized."""

    stationarity: float
    primal: float
    dual: float
    complementarity: float
    relative: float

    @property
    def max_abs(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


@dataclass(frozen=True, eq=False)
class QpSolution:
    x: np.ndarray
    objective: float
    ineq_multipliers: np.ndarray
    eq_multipliers: np.ndarray
    kkt_residual: float
    iterations: int
    status: QpStatus
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def kkt_residuals(problem: QpProblem, solution_or_x, z=None, y=None) -> KktResiduals:
    """Recompute KKT residuals from problem data alone.

    Accepts a :class:`QpSolution` or raw ``(x, z, y)``. ``relative`` is the max
    of the four residuals each divided by ``1 +`` the magnitude of the terms it
    balances; it is the quantity ``solve_qp`` compares with ``tol``.
    """
    if isinstance(solution_or_x, QpSolution):
        x = solution_or_x.x
        z = solution_or_x.ineq_multipliers
        y = solution_or_x.eq_multipliers
    else:
        x = solution_or_x
    p = problem
    x = np.asarray(x, dtype=float)
    z = np.zeros(p.m_ineq) if z is None else np.asarray(z, dtype=float)
    y = np.zeros(p.m_eq) if y is None else np.asarray(y, dtype=float)
    if x.shape != (p.n,) or z.shape != (p.m_ineq,) or y.shape != (p.m_eq,):
        raise QpError("solution dimensions do not match the problem")

    def inf(v):
        return float(np.max(np.abs(v))) if v.size else 0.0

    Px, Atz, Ety = p.P @ x, p.A.T @ z, p.E.T @ y
    Ax, Ex = p.A @ x, p.E @ x
    stat = inf(Px + p.q + Atz + Ety)
    slack = Ax - p.b
    prim = max(float(np.max(slack, initial=0.0)), inf(Ex - p.d))
    dual = float(max(0.0, -np.min(z, initial=0.0)))
    comp = inf(z * slack)

    zmax = inf(z)
    prim_scale = max(inf(Ax), inf(p.b), inf(Ex), inf(p.d))
    rel = max(
        stat / (1.0 + max(inf(Px), inf(p.q), inf(Atz), inf(Ety))),
        prim / (1.0 + prim_scale),
        dual / (1.0 + zmax),
        comp / (1.0 + zmax * (1.0 + prim_scale)),
    )
    return KktResiduals(stat, prim, dual, comp, rel)


# -- scaling -----------------------------------------------------------------


def _col_inf(M: np.ndarray, n: int) -> np.ndarray:
    return np.max(np.abs(M), axis=0) if M.shape[0] else np.zeros(n)


def _row_inf(M: np.ndarray) -> np.ndarray:
    return np.max(np.abs(M), axis=1) if M.shape[1] else np.zeros(M.shape[0])


def _ruiz(P, q, A, E, iters: int = 25):
    """Modified Ruiz equilibration of the KKT matrix plus a cost scaling."""
    n = P.shape[0]
    D, R, Q = np.ones(n), np.ones(A.shape[0]), np.ones(E.shape[0])
    P, A, E = P.copy(), A.copy(), E.copy()

    def inv_sqrt(v):
        v = np.where(v < 1e-8, 1.0, v)
        return 1.0 / np.sqrt(np.clip(v, 1e-8, 1e8))

    for _ in range(iters):
        dc = inv_sqrt(np.maximum.reduce([_col_inf(P, n), _col_inf(A, n), _col_inf(E, n)]))
        dr = inv_sqrt(_row_inf(A))
        de = inv_sqrt(_row_inf(E))
        P = dc[:, None] * P * dc[None, :]
        A = dr[:, None] * A * dc[None, :]
        E = de[:, None] * E * dc[None, :]
        D *= dc
        R *= dr
        Q *= de
    qs = D * q
    pcol = float(np.mean(_col_inf(P, n))) if n else 0.0
    c = max(pcol, float(np.max(np.abs(qs), initial=0.0)))
    c = 1.0 / min(max(c, 1e-4), 1e4) if c > 0 else 1.0
    return c * P, c * qs, A, E, D, R, Q, c


# -- interior point ----------------------------------------------------------


def _step_to_boundary(v, dv) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


class _KktSystem:
    """Factorization of [[H + dI, E'], [E, -dI]] with iterative refinement."""

    def __init__(self, H, E, delta):
        n, me = H.shape[0], E.shape[0]
        self.H, self.E, self.n = H, E, n
        K = np.zeros((n + me, n + me))
        K[:n, :n] = H
        K[:n, n:] = E.T
        K[n:, :n] = E
        self.K = K
        Kreg = K.copy()
        idx = np.arange(n + me)
        Kreg[idx[:n], idx[:n]] += delta
        Kreg[idx[n:], idx[n:]] -= delta
        self.lu = sla.lu_factor(Kreg, check_finite=False)

    def solve(self, rx, ry, refine: int = 3):
        rhs = np.concatenate([rx, ry])
        sol = sla.lu_solve(self.lu, rhs, check_finite=False)
        for _ in range(refine):
            r = rhs - self.K @ sol
            sol = sol + sla.lu_solve(self.lu, r, check_finite=False)
        return sol[: self.n], sol[self.n :]


def _ipm(P, q, A, b, E, d, x0, tol, max_iter):
    n, m, me = P.shape[0], A.shape[0], E.shape[0]
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    y = np.zeros(me)
    if m:
        s = b - A @ x
        s = np.where(s > 1.0, s, 1.0)
        z = np.ones(m)
    else:
        s = z = np.zeros(0)
    history = []
    best, best_it = np.inf, 0
    best_merit, best_state = np.inf, (x.copy(), s.copy(), z.copy(), y.copy())
    nb = 1.0 + max(np.max(np.abs(b), initial=0.0), np.max(np.abs(d), initial=0.0))
    nq = 1.0 + np.max(np.abs(q), initial=0.0)
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        rd = P @ x + q + A.T @ z + E.T @ y
        rp = A @ x + s - b
        re = E @ x - d
        mu = float(s @ z) / m if m else 0.0
        pres = max(np.max(np.abs(rp), initial=0.0), np.max(np.abs(re), initial=0.0)) / nb
        dres = float(np.max(np.abs(rd), initial=0.0)) / nq
        obj = abs(0.5 * x @ P @ x + q @ x)
        gap = mu / (1.0 + obj)
        merit = max(pres, dres, gap)
        history.append(mu)
        logger.debug("ipm %3d pres %.2e dres %.2e gap %.2e", it, pres, dres, gap)
        if merit < best_merit:
            best_merit, best_state = merit, (x.copy(), s.copy(), z.copy(), y.copy())
        if merit <= tol:
            converged = True
            break
        if merit < 0.9 * best:
            best, best_it = merit, it
        elif it - best_it > 15:
            break

        w = z / s if m else np.zeros(0)
        H = P + A.T @ (w[:, None] * A)
        delta = 1e-13
        try:
            kkt = _KktSystem(H, E, delta)
        except (np.linalg.LinAlgError, ValueError):
            break

        def direction(rc):
            rx = -rd - A.T @ ((rc + z * rp) / s) if m else -rd
            dx, dy = kkt.solve(rx, -re)
            if m:
                dz = (rc + z * rp + z * (A @ dx)) / s
                ds = -rp - A @ dx
            else:
                dz = ds = np.zeros(0)
            return dx, ds, dz, dy

        if m:
            dxa, dsa, dza, dya = direction(-s * z)
            ta = min(_step_to_boundary(s, dsa), _step_to_boundary(z, dza))
            mu_aff = float((s + ta * dsa) @ (z + ta * dza)) / m
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, ds, dz, dy = direction(-s * z + sigma * mu - dsa * dza)
            t = min(1.0, 0.99 * min(_step_to_boundary(s, ds), _step_to_boundary(z, dz)))
        else:
            dx, ds, dz, dy = direction(np.zeros(0))
            t = 1.0
        x = x + t * dx
        s = s + t * ds
        z = z + t * dz
        y = y + t * dy
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            break
    x, s, z, y = best_state
    return x, s, z, y, it, converged, history


# -- polishing ---------------------------------------------------------------


def _polish(P, q, A, b, E, d, x, z, active):
    """Solve the KKT equalities of the active set guessed from the IPM iterate.

    Works on the equilibrated data; returns scaled ``(x, z, y)`` or None.
    """
    n, m, me = P.shape[0], A.shape[0], E.shape[0]
    C = np.vstack([A[active], E])
    rhs_c = np.concatenate([b[active], d])
    mc = C.shape[0]
    K = np.zeros((n + mc, n + mc))
    K[:n, :n] = P
    K[:n, n:] = C.T
    K[n:, :n] = C
    delta = 1e-10
    Kreg = K.copy()
    Kreg[np.arange(n), np.arange(n)] += delta
    Kreg[np.arange(n, n + mc), np.arange(n, n + mc)] -= delta
    try:
        lu = sla.lu_factor(Kreg, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None
    rhs = np.concatenate([-q, rhs_c])
    sol = np.concatenate([x, z[active], np.zeros(me)])
    for _ in range(30):
        r = rhs - K @ sol
        if np.max(np.abs(r), initial=0.0) <= 1e-15:
            break
        sol = sol + sla.lu_solve(lu, r, check_finite=False)
    if not np.all(np.isfinite(sol)):
        return None
    zp = np.zeros(m)
    zp[active] = np.maximum(sol[n : n + len(active)], 0.0)
    return sol[:n], zp, sol[n + len(active) :]


def solve_qp(problem: QpProblem, tol: float = 1e-8, max_iter: int = 100000, x0=None) -> QpSolution:
    """Solve ``problem`` to relative KKT tolerance ``tol``.

    Returns status ``OPTIMAL`` only when :func:`kkt_residuals` reports a
    relative residual ``<= tol``. ``INFEASIBLE`` is reported when no point
    satisfies the constraints; ``MAX_ITER`` covers both an exhausted budget and
    interior-point stagnation (the best iterate is returned either way).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    p = problem
    Ps, qs, As, Es, D, R, Q, c = _ruiz(p.P, p.q, p.A, p.E)
    bs, ds = R * p.b, Q * p.d
    x0s = None if x0 is None else np.asarray(x0, dtype=float) / D
    ipm_tol = max(min(tol, 1e-9) * 1e-2, 1e-13)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        xs, ss, zs, ys, iters, converged, history = _ipm(
            Ps, qs, As, bs, Es, ds, x0s, ipm_tol, max_iter
        )

    def unscale(xs_, zs_, ys_):
        return D * xs_, R * zs_ / c, Q * ys_ / c

    x, z, y = unscale(xs, zs, ys)
    res = kkt_residuals(p, x, z, y)
    polished = False
    if np.all(np.isfinite(xs)) and np.all(np.isfinite(zs)):
        # activity is judged in scaled units, where slacks and multipliers are comparable
        out = _polish(Ps, qs, As, bs, Es, ds, xs, zs, np.flatnonzero(zs > ss))
        if out is not None:
            cand = unscale(*out)
            cres = kkt_residuals(p, *cand)
            if cres.relative < res.relative:
                (x, z, y), res, polished = cand, cres, True

    info = {
        "algorithm": "mehrotra-ipm+active-set-polish",
        "scaling": "ruiz-25",
        "cost_scale": c,
        "ipm_converged": converged,
        "polished": polished,
        "mu_history": history,
        "residuals": res,
    }
    if res.relative <= tol and np.all(np.isfinite(x)):
        status = QpStatus.OPTIMAL
    elif _infeasible(p, tol):
        status = QpStatus.INFEASIBLE
    else:
        status = QpStatus.MAX_ITER
        logger.warning("QP not solved to tolerance: relative residual %.3g", res.relative)
    return QpSolution(
        x=x,
        objective=p.objective(x) if np.all(np.isfinite(x)) else np.nan,
        ineq_multipliers=z,
        eq_multipliers=y,
        kkt_residual=res.relative,
        iterations=iters,
        status=status,
        info=info,
    )


def _infeasible(problem: QpProblem, tol: float) -> bool:
    """Phase-one LP: is there any x with Ax <= b, Ex = d (to within tol)?"""
    p = problem
    if p.m_ineq == 0 and p.m_eq == 0:
        return False
    # minimize t subject to Ax - t <= b, t >= 0
    n = p.n
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    A_ub = np.hstack([p.A, -np.ones((p.m_ineq, 1))]) if p.m_ineq else None
    A_eq = np.hstack([p.E, np.zeros((p.m_eq, 1))]) if p.m_eq else None
    bounds = [(None, None)] * n + [(0, None)]
    res = linprog(
        cost,
        A_ub=A_ub,
        b_ub=p.b if p.m_ineq else None,
        A_eq=A_eq,
        b_eq=p.d if p.m_eq else None,
        bounds=bounds,
        method="highs",
    )
    if res.status == 2:
        return True
    return res.status == 0 and res.fun > tol * (1.0 + np.max(np.abs(p.b), initial=0.0))
