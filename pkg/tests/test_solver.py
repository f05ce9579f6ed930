import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from climb.perturb import lime_sample, lime_weights
from climb.solver import (NumericalError, _spd_solve, solve_completeness_constrained, solve_kkt_oracle, solve_wls,
                          weighted_objective)


def random_problem(d, n, seed):
    rng = np.random.default_rng(seed)
    masks = lime_sample(d, n, rng)
    weights = lime_weights(masks) * rng.uniform(0.5, 2.0, n)
    labels = rng.normal(size=n) + masks @ rng.normal(size=d)
    fx, fb = rng.normal(), rng.normal()
    return masks, weights, labels, fx, fb


def test_wls_exact_recovery():
    rng = np.random.default_rng(0)
    Z = rng.integers(0, 2, (200, 6)).astype(float)
    coef = rng.normal(size=6)
    y = 0.7 + Z @ coef
    got, b0 = solve_wls(Z, y, rng.uniform(0.1, 1, 200))
    np.testing.assert_allclose(got, coef, atol=1e-9)
    assert b0 == pytest.approx(0.7, abs=1e-9)
    assert np.abs(y - b0 - Z @ got).max() <= 1e-9


def test_wls_weight_scale_invariance():
    masks, w, y, _, _ = random_problem(8, 300, 1)
    a = solve_wls(masks, y, w)
    b = solve_wls(masks, y, 10 * w)
    np.testing.assert_allclose(a[0], b[0], atol=1e-10)
    assert a[1] == pytest.approx(b[1], abs=1e-10)


@pytest.mark.parametrize("ridge", [0.0, 1e-6, 0.5])
def test_wls_gradient_vanishes(ridge):
    masks, w, y, _, _ = random_problem(7, 250, 2)
    coef, b0 = solve_wls(masks, y, w, ridge=ridge)

    def objective(theta):
        return weighted_objective(masks, w, y, theta[1:], theta[0]) + ridge * theta[1:] @ theta[1:]

    theta = np.append(b0, coef)
    h = 1e-6
    grad = np.array([(objective(theta + h * e) - objective(theta - h * e)) / (2 * h) for e in np.eye(len(theta))])
    assert np.linalg.norm(grad) <= 1e-6 * (1 + np.linalg.norm(y))


def test_wls_matches_lstsq_without_intercept():
    masks, w, y, _, _ = random_problem(5, 120, 3)
    coef, b0 = solve_wls(masks, y, w, fit_intercept=False)
    sw = np.sqrt(w)
    ref = np.linalg.lstsq(masks * sw[:, None], y * sw, rcond=None)[0]
    np.testing.assert_allclose(coef, ref, atol=1e-9)
    assert b0 == 0.0


def test_wls_jitter_rescues_rank_deficiency():
    Z = np.ones((10, 3))
    coef, _ = solve_wls(Z, np.arange(10.0), np.ones(10))
    assert np.all(np.isfinite(coef))


def test_wls_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_wls(np.ones((3, 2)), np.ones(3), np.array([1.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        solve_wls(np.ones((3, 2)), np.ones(2), np.ones(3))
    with pytest.raises(ValueError):
        solve_wls(np.ones((3, 2)), np.ones(3), np.ones(3), ridge=-1)


def test_rank_deficient_constrained_system_is_jittered():
    # identical rows make the reduced normal matrix rank one; jitter keeps the solve finite
    masks = np.tile(np.array([[1, 0, 0, 1]]), (5, 1))
    coef = solve_completeness_constrained(masks, np.ones(5), np.ones(5), 1.0, 0.0, 4)
    assert np.all(np.isfinite(coef)) and abs(coef.sum() - 1.0) <= 1e-10


def test_jitter_schedule_exhausted_raises():
    with pytest.raises(NumericalError) as info:
        _spd_solve(-np.eye(3), np.ones(3), 0.0)
    assert info.value.condition is not None


def test_constrained_d1():
    assert solve_completeness_constrained(np.zeros((0, 1)), np.zeros(0), np.zeros(0), 0.9, 0.2, 1).tolist() == \
        pytest.approx([0.7])
    assert solve_kkt_oracle(None, None, None, 0.9, 0.2, 1).tolist() == pytest.approx([0.7])


def test_constrained_additive_recovery_any_weights():
    rng = np.random.default_rng(4)
    v = rng.normal(size=9)
    fb = 0.3
    masks = lime_sample(9, 400, rng)
    labels = fb + masks @ v
    coef = solve_completeness_constrained(masks, rng.uniform(0.01, 5, 400), labels, fb + v.sum(), fb, 9)
    np.testing.assert_allclose(coef, v, atol=1e-10)


@pytest.mark.parametrize("seed", range(100))
def test_elimination_equals_kkt(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 31))
    n = int(rng.integers(max(d, 2 * d), 501))
    masks, w, y, fx, fb = random_problem(d, n, seed)
    elim = solve_completeness_constrained(masks, w, y, fx, fb, d)
    kkt = solve_kkt_oracle(masks, w, y, fx, fb, d)
    assert np.abs(elim - kkt).max() <= 1e-8
    assert abs(elim.sum() - (fx - fb)) <= 1e-10
    assert abs(kkt.sum() - (fx - fb)) <= 1e-12 * max(1.0, abs(fx - fb)) * d


@given(st.integers(2, 20), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_feasible_directions_never_improve(d, seed):
    masks, w, y, fx, fb = random_problem(d, 5 * d + 20, seed)
    coef = solve_completeness_constrained(masks, w, y, fx, fb, d)
    base = weighted_objective(masks, w, y, coef, fb)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        step = rng.normal(size=d)
        step -= step.mean()
        step *= 1e-3 / np.linalg.norm(step)
        assert weighted_objective(masks, w, y, coef + step, fb) >= base - 1e-12 * (1 + base)


@given(st.integers(2, 20), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_elimination_choice_immaterial(d, seed):
    masks, w, y, fx, fb = random_problem(d, 5 * d + 20, seed)
    coef = solve_completeness_constrained(masks, w, y, fx, fb, d)
    perm = np.random.default_rng(seed).permutation(d)
    rotated = solve_completeness_constrained(masks[:, perm], w, y, fx, fb, d)
    assert np.abs(rotated - coef[perm]).max() <= 1e-8
