"""Weighted least squares for the surrogate models.

``solve_wls`` fits LIME's ridge-penalised surrogate with a free intercept.
``solve_completeness_constrained`` fits SHAP and CLIMB: the intercept is
pinned to ``f(b)`` and the coefficients must sum to ``f(x) - f(b)``.  The
equality constraint is removed by substituting out the last coefficient,
which leaves an unconstrained problem with one fewer unknown and no intercept.
``solve_kkt_oracle`` solves the same constrained problem through its bordered
normal equations and exists to cross-check the elimination route.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

JITTER_STEPS = 6
JITTER_FLOOR = 1e-10


class NumericalError(ArithmeticError):
    """Normal equations stayed singular after the jitter schedule."""

    def __init__(self, message, condition=None):
        super().__init__(message if condition is None else f"{message} (condition number {condition:.3e})")
        self.condition = condition


def _check(design, targets, weights):
    Z = np.asarray(design, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if Z.ndim != 2:
        raise ValueError(f"design must be 2-D, got shape {Z.shape}")
    n = Z.shape[0]
    if n < 1:
        raise ValueError("need at least one row")
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError(f"targets {y.shape} and weights {w.shape} must have length {n}")
    if not (np.all(np.isfinite(w)) and np.all(w > 0)):
        raise ValueError("weights must be finite and positive")
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(y))):
        raise ValueError("design and targets must be finite")
    return Z, y, w


def _spd_solve(gram: np.ndarray, rhs: np.ndarray, ridge: float) -> np.ndarray:
    """Cholesky solve of ``(gram + ridge I) x = rhs`` with an escalating jitter fallback."""
    p = gram.shape[0]
    if p == 0:
        return np.zeros(0)
    eye = np.eye(p)
    schedule = [ridge] + [max(ridge, JITTER_FLOOR) * 10.0 ** j for j in range(1, JITTER_STEPS + 1)]
    for lam in schedule:
        try:
            factor = scipy.linalg.cho_factor(gram + lam * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        solution = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
        if np.all(np.isfinite(solution)):
            return solution
    raise NumericalError("normal equations are singular", np.linalg.cond(gram))


def solve_wls(design, targets, weights, ridge: float = 0.0, fit_intercept: bool = True) -> tuple[np.ndarray, float]:
    """Minimise ``sum w (y - b0 - Z @ coef)**2 + ridge * |coef|**2``.

    The intercept is unpenalised; it is handled by weighted centering.
    Returns ``(coef, intercept)``; the intercept is 0.0 when
    ``fit_intercept`` is false.
    """
    if ridge < 0:
        raise ValueError(f"ridge must be non-negative, got {ridge}")
    Z, y, w = _check(design, targets, weights)
    if fit_intercept:
        total = w.sum()
        z_mean = w @ Z / total
        y_mean = w @ y / total
        Zc, yc = Z - z_mean, y - y_mean
    else:
        Zc, yc = Z, y
    Zw = Zc * w[:, None]
    coef = _spd_solve(Zw.T @ Zc, Zw.T @ yc, ridge)
    intercept = float(y_mean - z_mean @ coef) if fit_intercept else 0.0
    return coef, intercept


def solve_completeness_constrained(masks, weights, labels, fx: float, fb: float, d_prime: int) -> np.ndarray:
    """Coefficients with intercept ``fb`` whose sum is exactly ``fx - fb``.

    Substituting ``phi_last = fx - fb - sum(phi_rest)`` turns each row's
    prediction ``fb + phi @ z`` into ``offset(z) + r(z) @ phi_rest`` with
    ``r(z) = z[:-1] - z[-1]`` and ``offset(z) = fb + z[-1] * (fx - fb)``.
    """
    if not (np.isfinite(fx) and np.isfinite(fb)):
        raise ValueError("f(x) and f(b) must be finite")
    delta = fx - fb
    if d_prime == 1:
        return np.array([delta])
    Z, y, w = _check(masks, labels, weights)
    if Z.shape[1] != d_prime:
        raise ValueError(f"masks have {Z.shape[1]} columns, expected d'={d_prime}")
    last = Z[:, -1]
    R = Z[:, :-1] - last[:, None]
    offset = fb + last * delta
    Rw = R * w[:, None]
    head = _spd_solve(Rw.T @ R, Rw.T @ (y - offset), 0.0)
    return np.append(head, delta - head.sum())


def solve_kkt_oracle(masks, weights, labels, fx: float, fb: float, d_prime: int) -> np.ndarray:
    """Reference solve of the constrained problem via its Lagrangian system.

    ``[[2A, 1], [1^T, 0]] @ [phi; nu] = [2b; fx - fb]`` with
    ``A = Z^T W Z`` and ``b = Z^T W (y - fb)``.
    """
    if d_prime == 1:
        return np.array([fx - fb])
    Z, y, w = _check(masks, labels, weights)
    Zw = Z * w[:, None]
    A = Zw.T @ Z
    b = Zw.T @ (y - fb)
    p = d_prime
    K = np.zeros((p + 1, p + 1))
    K[:p, :p] = 2 * A
    K[:p, p] = 1.0
    K[p, :p] = 1.0
    rhs = np.append(2 * b, fx - fb)
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        raise NumericalError("bordered KKT system is singular", np.linalg.cond(K)) from None
    return sol[:p]


def weighted_objective(masks, weights, labels, coef, intercept: float) -> float:
    """``sum w (y - intercept - Z @ coef)**2``."""
    Z = np.asarray(masks, dtype=np.float64)
    resid = np.asarray(labels) - intercept - Z @ coef
    return float(np.asarray(weights) @ resid ** 2)
