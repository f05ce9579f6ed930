"""Perturbation datasets: masks, their kernel weights, and black-box labels.

LIME and CLIMB draw masks with a uniformly random number of kept items and
weight them with an exponential kernel over cosine distance.  SHAP walks the
power set from the extreme subset sizes inward and weights with the Shapley
kernel.  The all-zeros and all-ones masks are never part of a perturbation
set; constrained solvers handle those two points exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ._validation import check_generator, check_masks
from .core import Instance, Method, apply_masks

DEFAULT_N_SAMPLES = 5000
DEFAULT_KERNEL_WIDTH = 0.25
_LABEL_CHUNK = 2048


class DegenerateInstance(ValueError):
    """Instance with a single active item: no informative mask exists."""


class InfiniteWeight(ValueError):
    """Shapley kernel requested at an empty or full subset."""


@dataclass(frozen=True)
class PerturbationSet:
    masks: np.ndarray
    weights: np.ndarray
    labels: np.ndarray
    method: Method

    def __post_init__(self):
        n = len(self.masks)
        if self.weights.shape != (n,) or self.labels.shape != (n,):
            raise ValueError("masks, weights and labels must have the same length")
        if not (np.all(np.isfinite(self.weights)) and np.all(self.weights > 0)):
            raise ValueError("weights must be finite and positive")
        sizes = self.masks.sum(axis=1)
        if np.any(sizes == 0) or np.any(sizes == self.masks.shape[1]):
            raise ValueError("perturbation sets exclude the empty and full masks")


def _d_prime(instance) -> int:
    return instance.d_prime if isinstance(instance, Instance) else int(instance)


def random_masks_of_size(d_prime: int, sizes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One uniformly random mask per entry of ``sizes`` with that many ones."""
    sizes = np.asarray(sizes)
    keys = rng.random((len(sizes), d_prime))
    ranks = keys.argsort(axis=1).argsort(axis=1)
    return (ranks < sizes[:, None]).astype(np.int8)


def lime_sample(instance, n_samples: int = DEFAULT_N_SAMPLES, seed=None) -> np.ndarray:
    """Draw ``n_samples`` masks: size uniform on ``1..d'-1``, then a uniform subset of that size."""
    d = _d_prime(instance)
    if d < 2:
        raise DegenerateInstance("d'=1 has no informative masks; handle it analytically")
    if n_samples < 1:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    rng = check_generator(seed)
    sizes = rng.integers(1, d, size=n_samples)
    return random_masks_of_size(d, sizes, rng)


def lime_kernel(mask, width: float = DEFAULT_KERNEL_WIDTH) -> float:
    """``exp(-D**2 / width**2)`` with ``D = 1 - sqrt(|z'| / d')``."""
    mask = np.asarray(mask)
    return float(lime_weights(mask[None, :], width)[0])


def lime_weights(masks, width: float = DEFAULT_KERNEL_WIDTH) -> np.ndarray:
    masks = np.atleast_2d(np.asarray(masks))
    if not width > 0:
        raise ValueError(f"kernel width must be positive, got {width}")
    sizes = masks.sum(axis=1)
    if np.any(sizes == 0):
        raise ValueError("proximity of the empty mask is undefined")
    distance = 1.0 - np.sqrt(sizes / masks.shape[1])
    return np.exp(-(distance ** 2) / width ** 2)


def _binom(n: int, k: int) -> float:
    try:
        return float(math.comb(n, k))
    except OverflowError:
        return math.exp(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def shap_kernel(d_prime: int, subset_size: int) -> float:
    """Shapley kernel weight ``(d'-1) / (C(d', s) * s * (d' - s))``."""
    if not 0 <= subset_size <= d_prime:
        raise ValueError(f"subset size {subset_size} outside [0, {d_prime}]")
    if subset_size in (0, d_prime):
        raise InfiniteWeight(f"Shapley kernel is infinite at |z'|={subset_size}, d'={d_prime}")
    s = subset_size
    if d_prime > 1000:
        log_binom = gammaln(d_prime + 1) - gammaln(s + 1) - gammaln(d_prime - s + 1)
        return math.exp(math.log(d_prime - 1) - log_binom - math.log(s) - math.log(d_prime - s))
    return (d_prime - 1) / (_binom(d_prime, s) * s * (d_prime - s))


def shap_size_mass(d_prime: int, subset_size: int) -> float:
    """Total kernel mass of all masks of one size: ``(d'-1) / (s (d'-s))``."""
    return (d_prime - 1) / (subset_size * (d_prime - subset_size))


def _all_masks_of_size(d_prime: int, k: int) -> np.ndarray:
    combos = np.fromiter(itertools.chain.from_iterable(itertools.combinations(range(d_prime), k)),
                         dtype=np.intp).reshape(-1, k)
    masks = np.zeros((len(combos), d_prime), dtype=np.int8)
    masks[np.arange(len(combos))[:, None], combos] = 1
    return masks


def _allocate(budget: int, shares: np.ndarray) -> np.ndarray:
    """Largest-remainder split of ``budget`` proportional to ``shares``."""
    exact = budget * shares / shares.sum()
    counts = np.floor(exact).astype(np.int64)
    short = budget - counts.sum()
    order = np.lexsort((np.arange(len(shares)), -(exact - counts)))
    counts[order[:short]] += 1
    return counts


def shap_enumerate(instance, budget: int = DEFAULT_N_SAMPLES, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Masks and Shapley-kernel weights under a sample budget.

    When the whole power set minus the two extremes fits, every mask appears
    once with weight ``shap_kernel``.  Otherwise size pairs ``(k, d'-k)`` are
    enumerated from the extremes inward while they fit, and the leftover
    budget is spread over the remaining sizes in proportion to their kernel
    mass.  A sampled mask carries weight ``mass(k) / n_k`` so each size keeps
    its total kernel mass.
    """
    d = _d_prime(instance)
    if d < 2:
        raise DegenerateInstance("d'=1 has no informative masks; handle it analytically")
    if budget < 1:
        raise ValueError(f"budget must be positive, got {budget}")

    blocks, weights = [], []
    if d < 63 and 2 ** d - 2 <= budget:
        for k in range(1, d):
            masks = _all_masks_of_size(d, k)
            blocks.append(masks)
            weights.append(np.full(len(masks), shap_kernel(d, k)))
        return np.concatenate(blocks), np.concatenate(weights)

    remaining = budget
    done = set()
    for k in range(1, d // 2 + 1):
        pair = (k,) if k == d - k else (k, d - k)
        count = sum(_binom(d, s) for s in pair)
        if count > remaining:
            break
        for s in pair:
            masks = _all_masks_of_size(d, s)
            blocks.append(masks)
            weights.append(np.full(len(masks), shap_kernel(d, s)))
            done.add(s)
        remaining -= int(count)

    open_sizes = np.array([s for s in range(1, d) if s not in done], dtype=np.int64)
    if remaining > 0 and len(open_sizes):
        rng = check_generator(seed)
        mass = np.array([shap_size_mass(d, s) for s in open_sizes])
        counts = _allocate(remaining, mass)
        sizes = np.repeat(open_sizes, counts)
        blocks.append(random_masks_of_size(d, sizes, rng))
        per_size = {int(s): shap_size_mass(d, int(s)) / c for s, c in zip(open_sizes, counts) if c}
        weights.append(np.array([per_size[int(s)] for s in sizes]))
    return np.concatenate(blocks), np.concatenate(weights)


def label_masks(model, instance: Instance, target_item: int, masks) -> np.ndarray:
    """Black-box score of ``target_item`` for each mask, in input order.

    Duplicate masks are scored once.  Models exposing
    ``masked_target_proba`` are queried on the active columns directly;
    anything else goes through ``predict_proba`` on densified rows.
    """
    masks = check_masks(masks, instance.d_prime)
    if len(masks) == 0:
        return np.zeros(0)
    unique, inverse = np.unique(masks, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    fast = getattr(model, "masked_target_proba", None)
    if fast is not None:
        values = np.concatenate([fast(instance.active_items, unique[i:i + _LABEL_CHUNK], target_item)
                                 for i in range(0, len(unique), _LABEL_CHUNK)])
    else:
        d = model.n_items
        values = np.concatenate([
            np.asarray(model.predict_proba(apply_masks(instance, unique[i:i + _LABEL_CHUNK], d)))[:, target_item]
            for i in range(0, len(unique), _LABEL_CHUNK)])
    return np.asarray(values, dtype=np.float64)[inverse]


def endpoint_values(model, instance: Instance, target_item: int) -> tuple[float, float]:
    """``(f(x), f(b))`` for the target item, with ``b`` the zero vector."""
    ends = np.stack([np.ones(instance.d_prime, np.int8), np.zeros(instance.d_prime, np.int8)])
    fx, fb = label_masks(model, instance, target_item, ends)
    return float(fx), float(fb)
