"""LIME, KernelSHAP and CLIMB as scikit-learn style estimators.

Each explainer is configured with the black-box model and its sampling
parameters, then ``fit`` on one instance (and target item).  Fitting sets
``coef_``, ``intercept_``, ``fx_``, ``fbaseline_`` and ``explanation_``;
``predict`` evaluates the fitted linear surrogate on masks.

>>> explainer = ClimbExplainer(model, n_samples=1000, random_state=0)
>>> explainer.fit(instance).explanation_.top_items(5)        # doctest: +SKIP
"""

from __future__ import annotations

import math
import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_generator, check_instance, check_masks
from .core import Explanation, Instance, Method
from .perturb import (DEFAULT_KERNEL_WIDTH, DEFAULT_N_SAMPLES, label_masks, lime_sample,
                      lime_weights, shap_enumerate)
from .recmodel import top_recommendation
from .solver import solve_completeness_constrained, solve_wls

DEFAULT_RIDGE = 1e-6
EXACT_SHAPLEY_MAX_D = 20


def _n_items(model) -> int:
    n = getattr(model, "n_items", None)
    if n is None:
        n = getattr(model, "n_features_in_")
    return int(n)


class _BaseExplainer(BaseEstimator):
    method: Method

    def _sample(self, instance: Instance, rng) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _solve(self, masks, weights, labels, fx, fb, d_prime) -> tuple[np.ndarray, float]:
        raise NotImplementedError

    def fit(self, X, target_item: int | None = None):
        """Explain the score of ``target_item`` at instance ``X``.

        ``X`` is an :class:`Instance` or a dense binary vector over the
        catalog.  Without ``target_item`` the model's top recommendation for
        the instance is explained.
        """
        d = _n_items(self.model)
        instance = check_instance(X, d)
        if target_item is None:
            target_item = top_recommendation(self.model, instance, d)
        target_item = int(target_item)
        rng = check_generator(self.random_state)
        timings = dict.fromkeys(("sampling", "labeling", "solving"), 0.0)

        ends = np.stack([np.ones(instance.d_prime, np.int8), np.zeros(instance.d_prime, np.int8)])
        degenerate = instance.d_prime == 1
        if degenerate:
            t0 = time.perf_counter()
            fx, fb = label_masks(self.model, instance, target_item, ends)
            timings["labeling"] += time.perf_counter() - t0
            coef, intercept = np.array([fx - fb]), fb
        else:
            t0 = time.perf_counter()
            masks, weights = self._sample(instance, rng)
            t1 = time.perf_counter()
            labels = label_masks(self.model, instance, target_item, np.concatenate([masks, ends]))
            labels, (fx, fb) = labels[:-2], labels[-2:]
            t2 = time.perf_counter()
            coef, intercept = self._solve(masks, weights, labels, fx, fb, instance.d_prime)
            t3 = time.perf_counter()
            timings["sampling"] += t1 - t0
            timings["labeling"] += t2 - t1
            timings["solving"] += t3 - t2
        fx, fb = float(fx), float(fb)

        self.instance_ = instance
        self.target_item_ = target_item
        self.coef_ = np.asarray(coef, dtype=np.float64)
        self.intercept_ = float(intercept)
        self.fx_ = fx
        self.fbaseline_ = fb
        self.timings_ = timings
        self.explanation_ = Explanation(self.method, self.coef_, self.intercept_, fx, fb, instance.active_items,
                                        user_id=instance.user_id, target_item=target_item, degenerate=degenerate)
        return self

    def explain(self, X, target_item: int | None = None) -> Explanation:
        return self.fit(X, target_item).explanation_

    def predict(self, masks) -> np.ndarray:
        """Surrogate predictions ``intercept_ + masks @ coef_``."""
        check_is_fitted(self, "coef_")
        masks = check_masks(masks, len(self.coef_))
        return self.intercept_ + masks @ self.coef_


class LimeExplainer(_BaseExplainer):
    """Weighted ridge surrogate with a free intercept.

    Parameters
    ----------
    model : ScoringModel
        Black box exposing ``predict_proba`` (and optionally ``masked_target_proba``).
    n_samples : int
        Number of perturbed masks.
    kernel_width : float
        Width of the exponential proximity kernel over cosine distance.
    alpha : float
        Ridge penalty on the coefficients (not the intercept).
    random_state : int, Generator or None
    """

    method = Method.LIME

    def __init__(self, model, n_samples: int = DEFAULT_N_SAMPLES, kernel_width: float = DEFAULT_KERNEL_WIDTH,
                 alpha: float = DEFAULT_RIDGE, random_state=None):
        self.model = model
        self.n_samples = n_samples
        self.kernel_width = kernel_width
        self.alpha = alpha
        self.random_state = random_state

    def _sample(self, instance, rng):
        masks = lime_sample(instance, self.n_samples, rng)
        return masks, lime_weights(masks, self.kernel_width)

    def _solve(self, masks, weights, labels, fx, fb, d_prime):
        return solve_wls(masks, labels, weights, ridge=self.alpha, fit_intercept=True)


class ClimbExplainer(_BaseExplainer):
    """LIME's sampler and kernel with the completeness constraint imposed.

    The intercept is fixed at the baseline score and the coefficients sum to
    ``f(x) - f(b)``.
    """

    method = Method.CLIMB

    def __init__(self, model, n_samples: int = DEFAULT_N_SAMPLES, kernel_width: float = DEFAULT_KERNEL_WIDTH,
                 random_state=None):
        self.model = model
        self.n_samples = n_samples
        self.kernel_width = kernel_width
        self.random_state = random_state

    def _sample(self, instance, rng):
        masks = lime_sample(instance, self.n_samples, rng)
        return masks, lime_weights(masks, self.kernel_width)

    def _solve(self, masks, weights, labels, fx, fb, d_prime):
        return solve_completeness_constrained(masks, weights, labels, fx, fb, d_prime), fb


class ShapExplainer(_BaseExplainer):
    """KernelSHAP with no regularisation.

    ``n_samples`` caps the number of coalitions; when the full power set fits,
    the result equals the exact Shapley values.
    """

    method = Method.SHAP

    def __init__(self, model, n_samples: int = DEFAULT_N_SAMPLES, random_state=None):
        self.model = model
        self.n_samples = n_samples
        self.random_state = random_state

    def _sample(self, instance, rng):
        return shap_enumerate(instance, self.n_samples, rng)

    def _solve(self, masks, weights, labels, fx, fb, d_prime):
        return solve_completeness_constrained(masks, weights, labels, fx, fb, d_prime), fb


EXPLAINERS = {Method.LIME: LimeExplainer, Method.SHAP: ShapExplainer, Method.CLIMB: ClimbExplainer}


def make_explainer(method, model, n_samples: int = DEFAULT_N_SAMPLES, kernel_width: float = DEFAULT_KERNEL_WIDTH,
                   ridge: float = DEFAULT_RIDGE, random_state=None) -> _BaseExplainer:
    method = Method.parse(method)
    if method is Method.LIME:
        return LimeExplainer(model, n_samples, kernel_width, ridge, random_state)
    if method is Method.CLIMB:
        return ClimbExplainer(model, n_samples, kernel_width, random_state)
    return ShapExplainer(model, n_samples, random_state)


def explain_lime(model, instance, target_item=None, n_samples=DEFAULT_N_SAMPLES, sigma=DEFAULT_KERNEL_WIDTH,
                 lam=DEFAULT_RIDGE, seed=None) -> Explanation:
    return LimeExplainer(model, n_samples, sigma, lam, seed).explain(instance, target_item)


def explain_shap(model, instance, target_item=None, budget=DEFAULT_N_SAMPLES, seed=None) -> Explanation:
    return ShapExplainer(model, budget, seed).explain(instance, target_item)


def explain_climb(model, instance, target_item=None, n_samples=DEFAULT_N_SAMPLES, sigma=DEFAULT_KERNEL_WIDTH,
                  seed=None) -> Explanation:
    return ClimbExplainer(model, n_samples, sigma, seed).explain(instance, target_item)


def exact_shapley(model, instance, target_item: int) -> np.ndarray:
    """Shapley values by enumerating all ``2**d'`` coalitions.

    ``phi_i = sum_S |S|! (d'-|S|-1)! / d'! * (f(S + i) - f(S))``, with the
    coalition value ``f(S)`` being the model score when only ``S`` is kept.
    """
    instance = check_instance(instance)
    d = instance.d_prime
    if d > EXACT_SHAPLEY_MAX_D:
        raise ValueError(f"exact Shapley values need 2**{d} model calls; refusing above d'={EXACT_SHAPLEY_MAX_D}")
    codes = np.arange(2 ** d)
    bits = ((codes[:, None] >> np.arange(d)) & 1).astype(np.int8)
    value = label_masks(model, instance, target_item, bits)
    sizes = bits.sum(axis=1)
    coalition_weight = np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d)
                                 for s in range(d)])
    phi = np.empty(d)
    for i in range(d):
        without = codes[(codes >> i) & 1 == 0]
        phi[i] = np.sum(coalition_weight[sizes[without]] * (value[without | (1 << i)] - value[without]))
    return phi
