"""Domain types shared by every part of the toolkit.

An instance is stored sparsely as the sorted indices of its nonzero items.
Its interpretable representation is the all-ones vector over those indices,
and a mask (a binary vector of the same length) selects which of them are
kept.  Masks are plain ``numpy`` arrays; a batch of masks is a 2-D array with
one mask per row.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

#: Completeness tolerances asserted when a constrained explanation is built.
INTERCEPT_TOL = 1e-9
COMPLETENESS_TOL = 1e-8


class DimensionError(ValueError):
    """Raised when a mask or vector does not match the instance it belongs to."""


class Method(str, enum.Enum):
    LIME = "LIME"
    SHAP = "SHAP"
    CLIMB = "CLIMB"

    @classmethod
    def parse(cls, value: "str | Method") -> "Method":
        if isinstance(value, Method):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ValueError(f"unknown method {value!r}; expected one of lime, shap, climb") from None

    @property
    def constrained(self) -> bool:
        return self is not Method.LIME


@dataclass(frozen=True)
class Catalog:
    item_count: int
    item_labels: tuple[str, ...]

    def __post_init__(self):
        if self.item_count < 2:
            raise ValueError(f"catalog needs at least 2 items, got {self.item_count}")
        if len(self.item_labels) != self.item_count:
            raise ValueError("item_labels length must equal item_count")
        if len(set(self.item_labels)) != self.item_count:
            raise ValueError("item labels must be unique")

    @classmethod
    def from_labels(cls, labels: Sequence[Any]) -> "Catalog":
        labels = tuple(str(label) for label in labels)
        return cls(len(labels), labels)

    @classmethod
    def range(cls, n_items: int) -> "Catalog":
        return cls(n_items, tuple(str(i) for i in range(n_items)))

    def label(self, index: int) -> str:
        return self.item_labels[index]


@dataclass(frozen=True)
class Instance:
    """A user as the sorted, duplicate-free list of items they interacted with."""

    user_id: Any
    active_items: tuple[int, ...]

    def __post_init__(self):
        items = tuple(int(i) for i in self.active_items)
        if not items:
            raise ValueError(f"instance {self.user_id!r} has no active items")
        if items[0] < 0 or any(b <= a for a, b in zip(items, items[1:])):
            raise ValueError(f"active_items of {self.user_id!r} must be strictly increasing and non-negative")
        object.__setattr__(self, "active_items", items)

    @property
    def d_prime(self) -> int:
        return len(self.active_items)

    @property
    def indices(self) -> np.ndarray:
        return np.asarray(self.active_items, dtype=np.intp)

    def check_catalog(self, catalog: Catalog | int) -> None:
        d = catalog if isinstance(catalog, int) else catalog.item_count
        if self.active_items[-1] >= d:
            raise DimensionError(f"instance {self.user_id!r} references item {self.active_items[-1]} >= {d}")

    def without(self, removed: Sequence[int]) -> tuple[int, ...]:
        """Active items left after dropping the given item indices."""
        gone = set(int(i) for i in removed)
        return tuple(i for i in self.active_items if i not in gone)


def to_interpretable(instance: Instance) -> np.ndarray:
    """The interpretable form of ``instance``: all ones over its active items."""
    return np.ones(instance.d_prime, dtype=np.int8)


def apply_mask(instance: Instance, mask, catalog: Catalog | int) -> np.ndarray:
    """Map a mask back into the dense item space of length ``d``.

    The all-ones mask reproduces the instance and the all-zeros mask yields
    the zero baseline.
    """
    d = catalog if isinstance(catalog, int) else catalog.item_count
    mask = np.asarray(mask)
    if mask.shape != (instance.d_prime,):
        raise DimensionError(f"mask of shape {mask.shape} does not match d'={instance.d_prime}")
    instance.check_catalog(d)
    x = np.zeros(d, dtype=np.float64)
    x[instance.indices[mask.astype(bool)]] = 1.0
    return x


def apply_masks(instance: Instance, masks, catalog: Catalog | int) -> np.ndarray:
    """Batched :func:`apply_mask`; returns an ``(n, d)`` array."""
    d = catalog if isinstance(catalog, int) else catalog.item_count
    masks = np.atleast_2d(np.asarray(masks))
    if masks.shape[1] != instance.d_prime:
        raise DimensionError(f"masks have {masks.shape[1]} columns, expected d'={instance.d_prime}")
    instance.check_catalog(d)
    X = np.zeros((masks.shape[0], d), dtype=np.float64)
    X[:, instance.indices] = masks
    return X


def derive_seed(master_seed: int, stream_label: str, index: int) -> int:
    """Deterministic 64-bit seed for one named stream and work item.

    Hash based, so per-user work does not depend on evaluation order.
    """
    key = f"{int(master_seed)}\x1f{stream_label}\x1f{int(index)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class Explanation:
    """Attributions for one (instance, target item) pair."""

    method: Method
    coefficients: np.ndarray
    intercept: float
    fx: float
    fbaseline: float
    item_indices: tuple[int, ...]
    user_id: Any = None
    target_item: int | None = None
    degenerate: bool = False
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        method = Method.parse(self.method)
        object.__setattr__(self, "method", method)
        coef = np.asarray(self.coefficients, dtype=np.float64).copy()
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "item_indices", tuple(int(i) for i in self.item_indices))
        if coef.shape != (len(self.item_indices),):
            raise DimensionError("coefficients length must equal item_indices length")
        values = [self.intercept, self.fx, self.fbaseline]
        if not (np.all(np.isfinite(coef)) and all(math.isfinite(v) for v in values)):
            raise ValueError(f"{method.value} explanation contains non-finite values")
        if method.constrained:
            if abs(self.intercept - self.fbaseline) > INTERCEPT_TOL:
                raise ValueError("constrained explanation intercept must equal f(baseline)")
            residual = self.completeness_residual
            if abs(residual) > COMPLETENESS_TOL:
                raise ValueError(f"completeness violated for {method.value}: residual {residual:.3e}")

    @property
    def completeness_residual(self) -> float:
        """``intercept + sum(coefficients) - f(x)``; zero for SHAP and CLIMB."""
        return float(self.intercept + self.coefficients.sum() - self.fx)

    @property
    def fitted_value(self) -> float:
        """Surrogate prediction at the instance itself (the all-ones mask)."""
        return float(self.intercept + self.coefficients.sum())

    def ranking(self) -> np.ndarray:
        """Positions into ``item_indices`` by descending coefficient, ties by item index."""
        order = np.lexsort((np.asarray(self.item_indices), -self.coefficients))
        return order

    def top_items(self, k: int) -> list[int]:
        return [self.item_indices[j] for j in self.ranking()[:k]]

    def to_dict(self, catalog: Catalog | None = None) -> dict:
        items = []
        for j in self.ranking():
            idx = self.item_indices[j]
            items.append({
                "index": idx,
                "label": catalog.label(idx) if catalog is not None else str(idx),
                "coefficient": float(self.coefficients[j]),
            })
        return {
            "method": self.method.value,
            "user_id": self.user_id,
            "target_item": self.target_item,
            "fx": self.fx,
            "fbaseline": self.fbaseline,
            "intercept": self.intercept,
            "degenerate": self.degenerate,
            "items": items,
        }
