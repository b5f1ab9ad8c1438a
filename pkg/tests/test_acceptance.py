"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line; the lines are repeated in the pytest
terminal summary.
"""

import math
import time
from functools import lru_cache

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalsvm.baselines import LearnerKind, train_two_model
from causalsvm.bounds import (
    BoundInputs,
    GaussianParametric,
    delta_c,
    delta_t,
    estimate_d2,
    gaussian_d2,
    generalization_bound,
)
from causalsvm.cv import CvGrid, nested_cv_select
from causalsvm.domain import Dataset, make_unit, split_train_test, with_ratios
from causalsvm.evaluation import LossKind, evaluate_model, pointwise_loss, quantile_neutral_loss
from causalsvm.kernels import KernelSpec, gram_matrix
from causalsvm.qp import kkt_residuals, solve_qp
from causalsvm.surrogate import SurrogateLoss, check_surrogate_validity, minimax_risk, surrogate_value
from causalsvm.svm import (
    assemble_dual,
    kernel_part,
    line_search_intercept,
    predict_effects,
    recover_intercept,
    train,
)
from causalsvm.synthetic import generate_spirals
from causalsvm.weights import constant_ratios

from .conftest import random_dataset, record

SEEDS = range(10)
N_SPIRAL = 800  # split in half: 400 train, 400 test
GAMMA = 1e-8


# -- finite populations with exact expectations ------------------------------


def _population(rng):
    """Support points with integer group counts and outcome probabilities in quarters.

    Returns the treatment-weighted exact expectation of ``l_1`` for a random
    decision function, plus a dataset whose empirical minimax risk equals the
    population surrogate risks exactly (every quarter-probability is realized
    by replicating units four times per count).
    """
    while True:
        m = int(rng.integers(1, 7))
        c_t = rng.integers(1, 4, m)
        c_c = rng.integers(1, 4, m)
        if c_t.sum() + c_c.sum() <= 12:
            break
    p_t = rng.integers(0, 5, m) / 4.0
    p_c = rng.integers(0, 5, m) / 4.0
    special = np.array([-1.0, 0.0, 1.0, -0.5, 0.5, 2.0, -2.0])
    h = np.where(rng.random(m) < 0.4, rng.choice(special, m), rng.uniform(-3, 3, m))
    mu_t = c_t / c_t.sum()
    mu_c = c_c / c_c.sum()
    ratio = mu_c / mu_t

    exact_l1 = 0.0
    for k in range(m):
        for yt, pt in ((1, p_t[k]), (-1, 1 - p_t[k])):
            for yc, pc in ((1, p_c[k]), (-1, 1 - p_c[k])):
                exact_l1 += mu_t[k] * pt * pc * pointwise_loss(LossKind.L1, h[k], yt, yc)

    units, hv = [], []
    for k in range(m):
        x = [float(k)]
        for group, count, p in (("T", c_t[k], p_t[k]), ("C", c_c[k], p_c[k])):
            n_pos = int(round(4 * p))
            for _ in range(int(count)):
                for j in range(4):
                    units.append(make_unit(x, group, 1 if j < n_pos else -1, ratio=None if group == "T" else ratio[k]))
                    hv.append(h[k])
    return exact_l1, Dataset(tuple(units)), np.array(hv)


@lru_cache(maxsize=None)
def _population_checks():
    rng = np.random.default_rng(1)
    rows = []
    for _ in range(200):
        for _ in range(3):
            exact, data, hv = _population(rng)
            for loss in SurrogateLoss:
                rows.append((loss, exact, minimax_risk(hv, data, loss)))
    return rows


def test_criterion_01_minimax_dominates_exact_loss():
    t0 = time.perf_counter()
    rows = _population_checks()
    elapsed = time.perf_counter() - t0
    violations = [(l, e, r) for l, e, r in rows if e > r.minimax + 1e-12]
    ok = not violations and elapsed < 30 and len(rows) >= 200 * 5
    record(1, "exact mean l1 <= minimax surrogate", ok, f"{len(rows)} checks, {len(violations)} violations, {elapsed:.1f}s")
    assert not violations
    assert elapsed < 30


def test_criterion_02_max_vs_sum():
    rows = _population_checks()
    not_le = [r for _, _, r in rows if r.minimax > r.total]
    differ = [r for _, _, r in rows if r.treatment_risk != r.control_risk]
    not_strict = [r for r in differ if not r.minimax < r.total]
    # max == sum with differing risks happens exactly when the smaller risk is 0
    unexplained = [r for r in not_strict if min(r.treatment_risk, r.control_risk) != 0.0]
    ok = not not_le and not unexplained
    record(
        2,
        "minimax <= sum, strict when risks differ",
        ok,
        f"{len(differ)} differing, {len(not_strict)} equal-with-a-zero-risk, {len(unexplained)} unexplained",
    )
    assert not not_le
    assert not unexplained


# -- duality ------------------------------------------------------------------


def test_criterion_03_duality_certification():
    rng = np.random.default_rng(3)
    kernels = [KernelSpec.linear(), KernelSpec.polynomial(2), KernelSpec.polynomial(3), KernelSpec.rbf(0.5)]
    gammas = [1e-4, 1e-2, 1.0]
    t0 = time.perf_counter()
    worst_gap, worst_kkt, count = 0.0, 0.0, 0
    for i in range(60):
        data = random_dataset(rng, int(rng.integers(4, 31)), int(rng.integers(1, 4)))
        k, g = kernels[i % 4], gammas[(i // 4) % 3]
        model = train(data, k, g)
        problem = assemble_dual(model.train, k, g)
        res = kkt_residuals(problem, solve_qp(problem, tol=1e-8))
        worst_gap = max(worst_gap, model.duality_gap / (1 + abs(model.primal_objective)))
        worst_kkt = max(worst_kkt, res.max_abs)
        count += 1
    elapsed = time.perf_counter() - t0
    ok = worst_gap <= 1e-4 and worst_kkt <= 1e-6 and elapsed < 60
    record(3, "duality gap and KKT certification", ok, f"{count} instances, gap {worst_gap:.2e}, kkt {worst_kkt:.2e}, {elapsed:.1f}s")
    assert worst_gap <= 1e-4
    assert worst_kkt <= 1e-6
    assert elapsed < 60


def _toy():
    return Dataset((make_unit([1.0], "T", 1), make_unit([-1.0], "C", -1, ratio=1.0)))


def _toy_grid_oracle(gamma=1.0):
    """Minimum of the primal objective over a (slope, intercept) grid."""
    a = np.linspace(-3, 3, 241)[:, None]
    w0 = np.linspace(-3, 3, 241)[None, :]
    treat = np.maximum(0, 1 - (a * 1 + w0))
    ctrl = np.maximum(0, 1 + (a * -1 + w0) * -1)
    obj = np.maximum(treat, ctrl) + gamma * a**2
    i, j = np.unravel_index(np.argmin(obj), obj.shape)
    return float(obj[i, j]), float(a[i, 0]), float(w0[0, j])


def test_criterion_04_toy_analytic():
    model = train(_toy(), KernelSpec.linear(), 1.0)
    oracle_val, oracle_slope, _ = _toy_grid_oracle()
    xs = np.linspace(-2, 2, 401)[:, None]
    labels = predict_effects(model, xs, theta=1.0)
    all_pos = all(lab.name == "POSITIVE" for lab in labels)
    ok = model.primal_objective <= 1e-6 and all_pos and abs(model.primal_objective - oracle_val) <= 1e-6
    record(4, "toy positive-effect instance", ok, f"primal {model.primal_objective:.2e}, oracle {oracle_val:.2e}, w0 {model.w0:.3f}")
    assert model.primal_objective <= 1e-6
    assert oracle_val == pytest.approx(0.0, abs=1e-12) and oracle_slope == 0.0
    assert all_pos


def test_criterion_05_intercept_equivalence():
    rng = np.random.default_rng(5)
    kernel, gamma = KernelSpec.rbf(0.5), 0.01
    diffs = []
    for _ in range(20):
        n = int(rng.integers(10, 31))
        X = rng.normal(size=(n, 2))
        g = np.arange(n) % 2 == 0
        y = np.where(X[:, 0] + 0.5 * rng.normal(size=n) > 0, 1, -1)
        y = np.where(g, y, -y)
        units = [make_unit(X[k], "T" if g[k] else "C", y[k], ratio=None if g[k] else 1.0) for k in range(n)]
        model = train(Dataset(tuple(units)), kernel, gamma)
        v = np.concatenate([model.lam, model.eta, [model.alpha]])
        w_cs, how = recover_intercept(v, model.train, kernel, gamma)
        f = kernel_part(gram_matrix(kernel, model.train), model.train, model.lam, model.eta, gamma)
        w_ls = line_search_intercept(f, model.train)
        assert how == "complementary-slackness"
        diffs.append(abs(w_cs - w_ls))
    worst = max(diffs)
    record(5, "slackness vs line-search intercept", worst <= 1e-4, f"max |diff| {worst:.2e} over 20 instances")
    assert worst <= 1e-4


# -- spirals -------------------------------------------------------------------


@lru_cache(maxsize=None)
def _spiral_split(noise, seed):
    data = constant_ratios(generate_spirals(N_SPIRAL, noise, seed))
    return split_train_test(data, 0.5, seed)


@lru_cache(maxsize=None)
def _spiral_losses(noise, kernel_name, method="causal"):
    kernel = KernelSpec.rbf(0.1) if kernel_name == "rbf" else KernelSpec.linear()
    out = []
    for seed in SEEDS:
        tr, te = _spiral_split(noise, seed)
        if method == "causal":
            model = train(tr, kernel, GAMMA)
        else:
            model = train_two_model(LearnerKind.svm(kernel, gamma=GAMMA), tr, seed)
        out.append([r.loss_percent for r in evaluate_model(model, te, [0.01, 0.1])])
    return np.array(out)


def test_criterion_06_clean_spirals():
    t0 = time.perf_counter()
    losses = _spiral_losses(0.0, "rbf")
    elapsed = time.perf_counter() - t0
    mean = losses[:, 1].mean()
    ok = mean <= 6.0 and elapsed < 300
    record(6, "clean spirals, rbf causal SVM", ok, f"loss@0.1 {mean:.2f}({losses[:, 1].std(ddof=1):.2f}), {elapsed:.1f}s")
    assert mean <= 6.0
    assert elapsed < 300


def test_criterion_07_noisy_spirals():
    rbf = _spiral_losses(0.2, "rbf")[:, 1].mean()
    lin = _spiral_losses(0.2, "linear")[:, 1].mean()
    ok = 14.0 <= rbf <= 26.0 and lin - rbf >= 20.0
    record(7, "noisy spirals, rbf in band and beats linear", ok, f"rbf {rbf:.2f}, linear {lin:.2f}")
    assert 14.0 <= rbf <= 26.0
    assert lin - rbf >= 20.0


def test_criterion_08_two_svm_baseline():
    mean = _spiral_losses(0.0, "rbf", "two_svm")[:, 1].mean()
    record(8, "difference of two SVMs on clean spirals", mean <= 2.0, f"loss@0.1 {mean:.2f}")
    assert mean <= 2.0


# -- surrogates, robustness, bounds ---------------------------------------------


def test_criterion_09_surrogate_validity():
    results = {loss: check_surrogate_validity(loss, -10.0, 10.0, 1e-3) for loss in SurrogateLoss}
    ok = all(r.passed for r in results.values())
    at_points = all(surrogate_value(loss, z) >= (z >= 0) + (z >= 1) for loss in SurrogateLoss for z in (0.0, 1.0))
    record(9, "all five surrogates valid on [-10, 10]", ok and at_points, f"{next(iter(results.values())).n_points} points each")
    assert ok and at_points


def _robustness_instance():
    treat = [(-2, -1), (-1, -1), (-1, 1), (1, 1), (1, -1), (2, 1), (0.5, -1), (-0.5, 1)]
    ctrl = [(-2, 1), (-1, 1), (1, -1), (2, -1)]
    units = [make_unit([x], "T", y) for x, y in treat] + [make_unit([x], "C", y, ratio=1.0) for x, y in ctrl]
    return Dataset(tuple(units))


@settings(max_examples=25, deadline=None)
@given(c=st.floats(0.7, 1.4))
def _check_ratio_scaling(c):
    data, base, gamma = _ROBUST["data"], _ROBUST["h"], _ROBUST["gamma"]
    scaled = with_ratios(data, [None if u.is_treated else u.ratio * c for u in data.units])
    model = train(scaled, KernelSpec.linear(), gamma)
    risk = minimax_risk(model.decision_values(model.train.X), model.train)
    assert risk.control_risk < risk.treatment_risk
    diff = float(np.max(np.abs(model.decision_values(data.X) - base)))
    _ROBUST["worst"] = max(_ROBUST["worst"], diff)
    assert diff <= 1e-6


_ROBUST: dict = {}


def test_criterion_10_ratio_robustness():
    data, gamma = _robustness_instance(), 0.1
    model = train(data, KernelSpec.linear(), gamma)
    risk = minimax_risk(model.decision_values(model.train.X), model.train)
    _ROBUST.update(data=data, h=model.decision_values(data.X), gamma=gamma, worst=0.0)
    gap = risk.treatment_risk - risk.control_risk
    ok = gap >= 0.1
    try:
        _check_ratio_scaling()
        for c in (0.7, 1.4):
            _check_ratio_scaling.hypothesis.inner_test(c)
    except AssertionError:
        ok = False
    record(10, "decision values ignore control-ratio scaling", ok, f"risk gap {gap:.3f}, max change {_ROBUST['worst']:.1e}")
    assert gap >= 0.1
    assert ok


def _mp_delta_t(n_t, delta, growth):
    return 2 * mp.sqrt(2 * (mp.mpf(growth) + mp.log(4 / mp.mpf(delta))) / n_t)


def _mp_delta_c(n_c, delta, p, d2):
    inner = (p * mp.log(2 * mp.mpf(n_c) * mp.e / p) + mp.log(4 / mp.mpf(delta))) / n_c
    return mp.power(2, mp.mpf(5) / 4) * mp.sqrt(d2) * mp.power(inner, mp.mpf(3) / 8)


def _mp_gaussian_d2(mu_p, cov_p, mu_q, cov_q):
    k = len(mu_p)
    Sp, Sq = mp.matrix(cov_p.tolist()), mp.matrix(cov_q.tolist())
    diff = mp.matrix((np.asarray(mu_q) - np.asarray(mu_p)).tolist())
    Sq_inv = Sq**-1
    tr = sum((Sq_inv * Sp)[i, i] for i in range(k))
    quad = (diff.T * Sq_inv * diff)[0, 0]
    kl_nats = (tr + quad - k + mp.log(mp.det(Sq) / mp.det(Sp))) / 2
    kl_bits = kl_nats / mp.log(2)
    return mp.power(2, kl_bits)


def test_criterion_11_bound_calculators():
    mp.mp.dps = 50
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        n_t, n_c = int(rng.integers(10, 5000)), int(rng.integers(10, 5000))
        delta = float(rng.uniform(0.01, 0.5))
        p = int(rng.integers(1, 10))
        growth = float(rng.uniform(0, 50))
        d2 = float(rng.uniform(1, 5))
        M = float(rng.uniform(1, 4))
        r_t, r_c = float(rng.uniform(0, 1)), float(rng.uniform(0, 1))
        worst = max(worst, abs(delta_t(n_t, delta, growth) - float(_mp_delta_t(n_t, delta, growth))))
        worst = max(worst, abs(delta_c(n_c, delta, p, d2) - float(_mp_delta_c(n_c, delta, p, d2))))
        inputs = BoundInputs(n_t, n_c, delta, p, growth, d2, M)
        ref = M * (max(r_t, r_c) + max(_mp_delta_t(n_t, delta / 2, growth), _mp_delta_c(n_c, delta / 2, p, d2)))
        worst = max(worst, abs(generalization_bound(r_t, r_c, inputs) - float(ref)))
        d = int(rng.integers(1, 4))
        Xt = rng.normal(size=(40, d)) + rng.normal(size=d)
        Xc = rng.normal(size=(40, d)) * rng.uniform(0.5, 2)
        eye = 1e-6 * np.eye(d)
        ref_d2 = _mp_gaussian_d2(
            Xt.mean(0), np.cov(Xt, rowvar=False).reshape(d, d) + eye, Xc.mean(0), np.cov(Xc, rowvar=False).reshape(d, d) + eye
        )
        worst = max(worst, abs(estimate_d2(Xt, Xc, GaussianParametric()) - float(ref_d2)) / max(1.0, float(ref_d2)))
    identity = delta_t(8, 4 / math.e, 0.0)
    unit_gauss = gaussian_d2([0.0], [[1.0]], [1.0], [[1.0]])
    ok = worst <= 1e-9 and abs(identity - 1) <= 1e-12 and abs(unit_gauss - math.exp(0.5)) <= 1e-12
    record(11, "bound calculators vs high-precision oracle", ok, f"max error {worst:.1e}, d2(N(0,1)||N(1,1)) = {unit_gauss:.4f}")
    assert worst <= 1e-9
    assert identity == pytest.approx(1.0, abs=1e-12)
    assert unit_gauss == pytest.approx(1.6487212707001282, abs=1e-12)


def test_criterion_12_cv_selection():
    picks = []
    for seed in SEEDS:
        tr, _ = _spiral_split(0.0, seed)
        grid = CvGrid((KernelSpec.linear(), KernelSpec.rbf(0.1)), (GAMMA,), 5, seed)
        picks.append(nested_cv_select(tr, grid).kernel.kind)
    n_rbf = picks.count("rbf")
    record(12, "cv selects rbf on clean spirals", n_rbf >= 9, f"rbf in {n_rbf}/10 seeds")
    assert n_rbf >= 9


@settings(max_examples=200, deadline=None)
@given(
    h=st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=60),
    data=st.data(),
)
def _check_monotone(h, data):
    n = len(h)
    y_t = np.array(data.draw(st.lists(st.sampled_from([-1, 1]), min_size=n, max_size=n)))
    fr = sorted(data.draw(st.lists(st.floats(0, 0.99), min_size=2, max_size=6)))
    losses = [quantile_neutral_loss(h, (y_t, -y_t), f).loss_percent for f in fr]
    assert all(a >= b for a, b in zip(losses, losses[1:]))


def test_criterion_13_metric_monotone():
    ok = True
    try:
        _check_monotone()
    except AssertionError:
        ok = False
    record(13, "quantile-neutral loss nonincreasing in neutral fraction", ok, "200 hypothesis examples")
    assert ok
