import numpy as np
import pytest
from sklearn.base import clone

from climb import Catalog, Instance, InteractionDataset, fit_cooc
from climb.explainers import (ClimbExplainer, LimeExplainer, ShapExplainer, exact_shapley, explain_climb,
                              explain_lime, explain_shap, make_explainer)

from conftest import AdditiveModel, ConstantModel, SaturatingModel, TableGame


def additive_case(d=7, n_items=30, seed=0):
    rng = np.random.default_rng(seed)
    active = tuple(sorted(rng.choice(n_items - 1, d, replace=False).tolist()))
    values = np.zeros(n_items)
    v = rng.normal(scale=0.1, size=d)
    values[list(active)] = v
    return AdditiveModel(n_items, n_items - 1, 0.25, values), Instance("u", active), v


@pytest.mark.parametrize("seed", range(5))
def test_additive_recovery(seed):
    model, inst, v = additive_case(seed=seed)
    lime = explain_lime(model, inst, model.target, n_samples=2000, seed=seed)
    np.testing.assert_allclose(lime.coefficients, v, atol=1e-6)
    assert lime.intercept == pytest.approx(0.25, abs=1e-6)
    for expl in (explain_shap(model, inst, model.target, seed=seed),
                 explain_climb(model, inst, model.target, n_samples=2000, seed=seed)):
        np.testing.assert_allclose(expl.coefficients, v, atol=1e-8)
        assert expl.intercept == pytest.approx(0.25, abs=1e-12)


def test_constant_model():
    model = ConstantModel(12, 0.4)
    inst = Instance("u", (1, 4, 6, 9))
    lime = explain_lime(model, inst, 0, n_samples=500, seed=0)
    assert np.abs(lime.coefficients).max() <= 1e-8
    assert lime.intercept == pytest.approx(0.4)
    for expl in (explain_shap(model, inst, 0), explain_climb(model, inst, 0, n_samples=500, seed=0)):
        assert np.abs(expl.coefficients).max() <= 1e-12


def test_two_player_game():
    table = {frozenset(): 0.0, frozenset({0}): 1.0, frozenset({1}): 2.0, frozenset({0, 1}): 4.0}
    model = TableGame(5, 4, (1, 3), table)
    inst = Instance("u", (1, 3))
    np.testing.assert_allclose(exact_shapley(model, inst, 4), [1.5, 2.5], atol=1e-12)
    np.testing.assert_allclose(explain_shap(model, inst, 4).coefficients, [1.5, 2.5], atol=1e-12)


@pytest.mark.parametrize("d", range(2, 11))
def test_kernel_shap_equals_exact_shapley(default_model, default_data, d):
    users = [u for u in default_data.users if u.d_prime == d]
    if not users:
        rng = np.random.default_rng(d)
        users = [Instance("synthetic", tuple(sorted(rng.choice(default_model.n_items, d, replace=False).tolist())))]
    inst = users[0]
    target = 0 if 0 not in inst.active_items else 1
    exact = exact_shapley(default_model, inst, target)
    shap = explain_shap(default_model, inst, target, budget=5000, seed=0)
    assert np.abs(shap.coefficients - exact).max() <= 1e-6 * max(1.0, np.abs(exact).max())
    assert abs(exact.sum() - (shap.fx - shap.fbaseline)) <= 1e-12


def test_symmetric_features_get_equal_shares():
    # a game symmetric in its first two players
    rng = np.random.default_rng(3)
    base = {frozenset(): 0.0}
    table = {}
    for code in range(16):
        s = frozenset(j for j in range(4) if code >> j & 1)
        key = (len(s & {0, 1}), frozenset(s - {0, 1}))
        base.setdefault(key, rng.normal())
        table[s] = 0.0 if not s else base[key]
    model = TableGame(10, 9, (2, 4, 5, 7), table)
    coef = explain_shap(model, Instance("u", (2, 4, 5, 7)), 9).coefficients
    assert abs(coef[0] - coef[1]) <= 1e-6


def test_symmetric_items_on_reference_model():
    # items 0 and 1 always appear together, so their W rows and popularity coincide
    rng = np.random.default_rng(0)
    users = []
    for u in range(300):
        items = set(rng.choice(np.arange(2, 40), 5, replace=False).tolist())
        if u % 3 == 0:
            items |= {0, 1}
        users.append(Instance(f"u{u}", tuple(sorted(items))))
    data = InteractionDataset.from_users(Catalog.range(40), users)
    model = fit_cooc(data)
    inst = Instance("x", (0, 1, 5, 9, 13))
    coef = explain_shap(model, inst, 20).coefficients
    assert abs(coef[0] - coef[1]) <= 1e-6 * np.abs(coef).max()
    assert abs(coef[0] - coef[2]) > 1e-6 * np.abs(coef).max()


def test_flat_region_lime_vs_climb():
    # f = 1 - relu(1 - sum(x)): every informative mask has f = f(x) = 1, while f(b) = 0
    model = SaturatingModel(20, 19, slope=1.0)
    inst = Instance("u", (0, 3, 5, 8, 11, 14))
    lime = explain_lime(model, inst, 19, n_samples=2000, seed=0)
    climb = explain_climb(model, inst, 19, n_samples=2000, seed=0)
    assert abs(lime.coefficients.sum()) <= 1e-6
    assert np.abs(lime.coefficients).max() <= 1e-6
    assert climb.coefficients.sum() == pytest.approx(1.0, abs=1e-12)
    assert climb.fx - climb.fbaseline == 1.0


def test_lime_is_not_constrained(default_model, default_data):
    residuals = []
    for user in default_data.users[:20]:
        if user.d_prime < 3:
            continue
        expl = explain_lime(default_model, user, n_samples=500, seed=1)
        residuals.append(abs(expl.completeness_residual))
    assert max(residuals) > 1e-9


def test_completeness_on_random_users(default_model, default_data):
    for i, user in enumerate(default_data.users[:30]):
        for expl in (explain_shap(default_model, user, budget=500, seed=i),
                     explain_climb(default_model, user, n_samples=500, seed=i)):
            assert abs(expl.intercept + expl.coefficients.sum() - expl.fx) <= 1e-8
            assert expl.intercept == expl.fbaseline
            assert len(expl.coefficients) == user.d_prime


def test_degenerate_single_item(small_model):
    inst = Instance("u", (4,))
    for method in ("lime", "shap", "climb"):
        expl = make_explainer(method, small_model, n_samples=100, random_state=0).explain(inst)
        assert expl.degenerate
        assert expl.coefficients[0] == pytest.approx(expl.fx - expl.fbaseline, abs=0)
        assert expl.intercept == expl.fbaseline


@pytest.mark.parametrize("cls", [LimeExplainer, ClimbExplainer, ShapExplainer])
def test_determinism_and_estimator_api(cls, small_model, small_data):
    user = max(small_data.users, key=lambda u: u.d_prime)
    a = cls(small_model, n_samples=400, random_state=5).fit(user)
    b = cls(small_model, n_samples=400, random_state=5).fit(user)
    assert np.array_equal(a.coef_, b.coef_)
    assert a.explanation_.ranking().tolist() == b.explanation_.ranking().tolist()
    params = a.get_params()
    assert params["n_samples"] == 400 and params["random_state"] == 5
    assert clone(a).get_params()["n_samples"] == 400
    ones = np.ones((1, user.d_prime), dtype=np.int8)
    assert a.predict(ones)[0] == pytest.approx(a.explanation_.fitted_value)
    assert set(a.timings_) == {"sampling", "labeling", "solving"}


def test_fit_accepts_dense_vector(small_model, small_data):
    user = small_data.users[0]
    x = np.zeros(small_model.n_items)
    x[list(user.active_items)] = 1
    a = ClimbExplainer(small_model, n_samples=200, random_state=0).fit(x)
    b = ClimbExplainer(small_model, n_samples=200, random_state=0).fit(user)
    assert np.array_equal(a.coef_, b.coef_)
    assert a.target_item_ == b.target_item_


def test_exact_shapley_refuses_large():
    inst = Instance("u", tuple(range(21)))
    with pytest.raises(ValueError):
        exact_shapley(ConstantModel(30), inst, 25)
