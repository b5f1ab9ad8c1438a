import numpy as np
import pytest

from causalsvm.domain import Dataset, EffectLabel, make_unit
from causalsvm.evaluation import LossKind, pointwise_loss
from causalsvm.kernels import KernelSpec, gram_matrix, signed_gram
from causalsvm.qp import solve_qp
from causalsvm.svm import (
    CS,
    LINE_SEARCH,
    CausalSvmModel,
    assemble_dual,
    decision_value,
    label_from_value,
    load_model,
    model_from_dict,
    model_to_dict,
    predict_effect,
    predict_effects,
    primal_objective,
    recover_intercept,
    save_model,
    support_vectors,
    train,
)
from causalsvm.synthetic import generate_spirals
from causalsvm.weights import constant_ratios

from .conftest import random_dataset

KERNELS = [KernelSpec.linear(), KernelSpec.polynomial(2), KernelSpec.rbf(0.5)]


def _toy():
    return Dataset((make_unit([1.0], "T", 1), make_unit([-1.0], "C", -1, ratio=1.0)))


def test_assemble_dual_shapes(rng):
    units = [make_unit([i], "T", 1) for i in range(2)] + [make_unit([i], "C", -1, ratio=1.0) for i in range(3)]
    prob = assemble_dual(Dataset(tuple(units)), KernelSpec.linear(), 1.0)
    assert prob.n == 6 and prob.m_eq == 1


def test_zero_vector_is_feasible(rng):
    data = random_dataset(rng, 7)
    prob = assemble_dual(data, KernelSpec.rbf(1.0), 0.1)
    v = np.zeros(prob.n)
    v[-1] = 0.5
    assert np.all(prob.A @ v <= prob.b + 1e-15)
    assert np.allclose(prob.E @ v, prob.d)


def test_quadratic_block_matches_signed_gram(rng):
    data = random_dataset(rng, 4)
    gamma = 0.3
    prob = assemble_dual(data, KernelSpec.polynomial(2), gamma)
    K = np.array([[(1 + a @ b) ** 2 for b in data.X] for a in data.X])
    s = np.where(data.treated, data.y_obs, -data.y_obs)
    assert np.allclose(prob.P[:4, :4], K * np.outer(s, s) / (2 * gamma), atol=1e-12)
    assert np.all(prob.P[4] == 0) and np.all(prob.P[:, 4] == 0)


def test_assemble_dual_errors(rng):
    data = random_dataset(rng, 4)
    with pytest.raises(ValueError, match="gamma"):
        assemble_dual(data, KernelSpec.linear(), 0.0)
    no_ratio = Dataset((make_unit([0.0], "T", 1), make_unit([1.0], "C", 1)))
    with pytest.raises(ValueError, match="ratio"):
        assemble_dual(no_ratio, KernelSpec.linear(), 1.0)


def test_toy_model():
    model = train(_toy(), KernelSpec.linear(), 1.0)
    assert model.primal_objective <= 1e-6
    assert decision_value(model, [1.0]) >= 1 - 1e-9
    assert decision_value(model, [-1.0]) >= 1 - 1e-9
    assert predict_effect(model, [0.0]) is EffectLabel.POSITIVE


def _check_invariants(model: CausalSvmModel):
    tr = model.train
    r = tr.ratios[~tr.treated]
    assert 0 <= model.alpha <= 1 and abs(model.alpha + model.beta - 1) <= 1e-9
    assert np.all(model.lam >= 0) and np.all(model.lam <= model.alpha / tr.n_t + 1e-9)
    assert np.all(model.eta >= 0) and np.all(model.eta <= model.beta / (tr.n_c * r) + 1e-9)
    y = tr.y_obs
    assert abs(model.lam @ y[: tr.n_t] - model.eta @ y[tr.n_t :]) <= 1e-6
    assert model.duality_gap >= -1e-6


@pytest.mark.parametrize("kernel", KERNELS)
@pytest.mark.parametrize("gamma", [1e-3, 0.1, 1.0])
def test_train_invariants_and_weak_duality(rng, kernel, gamma):
    for _ in range(3):
        model = train(random_dataset(rng, int(rng.integers(4, 25))), kernel, gamma)
        _check_invariants(model)
        assert model.duality_gap <= 1e-4 * (1 + abs(model.primal_objective))


def test_complementary_slackness(rng):
    tol = 1e-6
    for kernel in KERNELS:
        model = train(random_dataset(rng, 20), kernel, 0.05)
        tr = model.train
        h = model.decision_values(tr.X)
        y = tr.y_obs
        nt = tr.n_t
        rt = np.maximum(0, 1 - h[:nt] * y[:nt])
        sc = np.maximum(0, 1 + h[nt:] * y[nt:])
        cap_t = model.alpha / nt
        cap_c = model.beta / (tr.n_c * tr.ratios[nt:])
        assert np.all(np.abs(model.lam * (rt - 1 + h[:nt] * y[:nt])) <= tol)
        assert np.all(np.abs((cap_t - model.lam) * rt) <= tol)
        assert np.all(np.abs(model.eta * (sc - 1 - h[nt:] * y[nt:])) <= tol)
        assert np.all(np.abs((cap_c - model.eta) * sc) <= tol)


def test_large_gamma_gives_constant(rng):
    data = random_dataset(rng, 15)
    model = train(data, KernelSpec.rbf(0.5), 1e6)
    h = model.decision_values(rng.normal(size=(30, 2)))
    assert np.max(np.abs(h - model.w0)) <= 1e-5


def test_noisy_spiral_gap():
    data = constant_ratios(generate_spirals(400, 0.2, 3))
    model = train(data, KernelSpec.rbf(0.1), 1e-8)
    assert model.duality_gap <= 1e-3 * (1 + abs(model.primal_objective))
    sv_t, sv_c = support_vectors(model)
    assert sv_t.size + sv_c.size > 0


def test_zero_coefficients_give_intercept_everywhere(rng):
    data = random_dataset(rng, 5)
    model = CausalSvmModel(data, np.zeros(data.n_t), np.zeros(data.n_c), 0.5, 0.7, 1.0, KernelSpec.rbf(1.0), 0.0, 0.0)
    assert np.all(model.decision_values(rng.normal(size=(6, 2))) == 0.7)
    assert [a.size for a in support_vectors(model)] == [0, 0]


def test_decision_value_matches_gram_row(rng):
    model = train(random_dataset(rng, 12), KernelSpec.polynomial(3), 0.2)
    tr = model.train
    K = gram_matrix(model.kernel, tr)
    s = np.where(tr.treated, tr.y_obs, -tr.y_obs)
    u = np.concatenate([model.lam, model.eta])
    expected = model.w0 + K @ (u * s) / (2 * model.gamma)
    got = np.array([decision_value(model, x) for x in tr.X])
    assert np.allclose(got, expected, atol=1e-10)


def test_decision_value_dimension_check(rng):
    model = train(random_dataset(rng, 6), KernelSpec.linear(), 1.0)
    with pytest.raises(ValueError):
        decision_value(model, [1.0, 2.0, 3.0])


@pytest.mark.parametrize("h,theta,label", [(1.0, 1.0, EffectLabel.POSITIVE), (0.0, 0.3, EffectLabel.NEUTRAL), (-2.0, 1.0, EffectLabel.NEGATIVE), (-1.0, 1.0, EffectLabel.NEGATIVE), (0.99, 1.0, EffectLabel.NEUTRAL)])
def test_labels(h, theta, label):
    assert label_from_value(h, theta) is label


def test_predict_effect_rejects_bad_theta():
    model = train(_toy(), KernelSpec.linear(), 1.0)
    with pytest.raises(ValueError):
        predict_effect(model, [0.0], theta=0.0)


def test_positive_label_never_false_negative(rng):
    model = train(random_dataset(rng, 20), KernelSpec.rbf(0.5), 0.05)
    X = rng.normal(size=(50, 2)) * 2
    for x, lab in zip(X, predict_effects(model, X)):
        if lab is EffectLabel.POSITIVE:
            assert pointwise_loss(LossKind.L1, decision_value(model, x), 1, -1) == 0


def test_threshold_rescaling(rng):
    model = train(random_dataset(rng, 16), KernelSpec.rbf(0.5), 0.05)
    X = rng.normal(size=(200, 2)) * 2
    for theta in (0.5, 2.0, 3.0):
        # dividing w0 and the coefficients by theta divides h by theta
        scaled = CausalSvmModel(
            model.train, model.lam / theta, model.eta / theta, model.alpha, model.w0 / theta,
            model.gamma, model.kernel, 0.0, 0.0,
        )
        assert np.allclose(scaled.decision_values(X), model.decision_values(X) / theta, atol=1e-12)
        a = predict_effects(model, X, theta)
        b = predict_effects(scaled, X, 1.0)
        mismatch = [i for i, (p, q) in enumerate(zip(a, b)) if p is not q]
        # labels may differ only where h sits on the threshold up to round-off
        assert all(abs(abs(model.decision_values(X[i : i + 1])[0]) - theta) < 1e-9 for i in mismatch)


def test_recover_intercept_single_treatment_interior():
    data = Dataset((make_unit([1.0], "T", 1), make_unit([2.0], "C", 1, ratio=1.0)))
    # lam interior (cap 0.7), eta at its cap 0.3; K(w, x_T) = (0.3*1 - 0.3*2) / (2*0.5) = -0.3
    w0, how = recover_intercept(np.array([0.3, 0.3, 0.7]), data, KernelSpec.linear(), 0.5)
    assert how == CS
    assert w0 == pytest.approx(1.3, abs=1e-12)


def test_recover_intercept_single_control_interior():
    data = Dataset((make_unit([1.0], "T", -1), make_unit([2.0], "C", -1, ratio=1.0)))
    # lam at its cap 0.3, eta interior (cap 0.7); K(w, x_C) = (-0.3*2 + 0.3*4) / 1 = 0.6
    w0, how = recover_intercept(np.array([0.3, 0.3, 0.3]), data, KernelSpec.linear(), 0.5)
    assert how == CS
    assert w0 == pytest.approx(0.4, abs=1e-12)


def test_recover_intercept_falls_back_to_line_search():
    w0, how = recover_intercept(np.array([0.0, 0.0, 0.5]), _toy(), KernelSpec.linear(), 1.0)
    assert how == LINE_SEARCH
    assert w0 == pytest.approx(1.0)


def test_line_search_minimizes_primal(rng):
    data = random_dataset(rng, 14)
    k, g = KernelSpec.rbf(0.5), 0.1
    sol = solve_qp(assemble_dual(data, k, g))
    nt = data.n_t
    lam, eta = sol.x[:nt], sol.x[nt:-1]
    w_ls, _ = recover_intercept(np.concatenate([np.zeros_like(sol.x[:-1]), [0.5]]), data, k, g)
    from causalsvm.svm import kernel_part, line_search_intercept

    f = kernel_part(gram_matrix(k, data), data, lam, eta, g)
    w0 = line_search_intercept(f, data)
    best = primal_objective(data, k, g, lam, eta, w0)
    for w in np.linspace(w0 - 3, w0 + 3, 601):
        assert primal_objective(data, k, g, lam, eta, w) >= best - 1e-12
    assert np.isfinite(w_ls)


def test_primal_objective_zero_model(rng):
    data = random_dataset(rng, 6)
    assert primal_objective(data, KernelSpec.linear(), 1.0, np.zeros(data.n_t), np.zeros(data.n_c), 0.0) == pytest.approx(
        max(1.0, float(np.mean(1 / data.ratios[~data.treated])))
    )
    ones = Dataset(tuple(make_unit(u.features, u.group, u.y_obs, ratio=None if u.is_treated else 1.0) for u in data.units))
    assert primal_objective(ones, KernelSpec.linear(), 1.0, np.zeros(data.n_t), np.zeros(data.n_c), 0.0) == 1.0


def test_primal_objective_size_mismatch(rng):
    data = random_dataset(rng, 6)
    with pytest.raises(ValueError):
        primal_objective(data, KernelSpec.linear(), 1.0, np.zeros(1), np.zeros(1), 0.0)


def test_regularizer_identity(rng):
    data = random_dataset(rng, 8)
    k, g = KernelSpec.rbf(0.7), 0.25
    u = rng.uniform(0, 0.05, len(data))
    K = gram_matrix(k, data)
    S = signed_gram(K, data)
    s = np.where(data.treated, data.y_obs, -data.y_obs)
    c = u * s / (2 * g)
    # gamma K(w, w) computed from the explicit expansion
    assert g * c @ K @ c == pytest.approx(u @ S @ u / (4 * g), rel=1e-12)


def test_serialization_round_trip(tmp_path, rng):
    model = train(random_dataset(rng, 12), KernelSpec.polynomial(2), 0.1)
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path)
    X = rng.normal(size=(20, 2))
    assert np.max(np.abs(back.decision_values(X) - model.decision_values(X))) <= 1e-12
    d = model_to_dict(model)
    assert d["format_version"] == 1
    assert set(d) >= {"kernel", "gamma", "w0", "alpha", "beta", "lambda", "eta", "train_features", "train_labels", "train_groups", "ratios", "objective"}
    d["format_version"] = 99
    with pytest.raises(ValueError):
        model_from_dict(d)
