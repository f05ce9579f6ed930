"""Input validation helpers in the style of ``sklearn.utils.validation``."""

from __future__ import annotations

import numbers

import numpy as np
import scipy.sparse as sp
from sklearn.utils.validation import check_array

from .core import DimensionError, Instance


def check_binary_matrix(X, n_features: int | None = None, accept_sparse: bool = False):
    """Validate a 2-D (or single 1-D) 0/1 matrix and return it as float64."""
    if not sp.issparse(X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
    X = check_array(X, accept_sparse="csr" if accept_sparse else False, dtype=np.float64)
    values = X.data if sp.issparse(X) else X
    if not np.all((values == 0) | (values == 1)):
        raise ValueError("input must be binary (0/1)")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionError(f"expected {n_features} columns, got {X.shape[1]}")
    return X


def check_instance(instance, n_items: int | None = None) -> Instance:
    """Coerce a dense binary vector or an :class:`Instance` to an :class:`Instance`."""
    if isinstance(instance, Instance):
        inst = instance
    else:
        x = np.asarray(instance)
        if x.ndim != 1:
            raise ValueError(f"expected a 1-D binary vector, got shape {x.shape}")
        if n_items is not None and len(x) != n_items:
            raise DimensionError(f"vector has length {len(x)}, catalog has {n_items} items")
        if not np.all((x == 0) | (x == 1)):
            raise ValueError("input must be binary (0/1)")
        inst = Instance(None, tuple(np.flatnonzero(x)))
    if n_items is not None:
        inst.check_catalog(n_items)
    return inst


def check_masks(masks, d_prime: int) -> np.ndarray:
    masks = np.atleast_2d(np.asarray(masks))
    if masks.ndim != 2 or masks.shape[1] != d_prime:
        raise DimensionError(f"masks of shape {masks.shape} do not match d'={d_prime}")
    if not np.all((masks == 0) | (masks == 1)):
        raise ValueError("masks must be binary")
    return masks.astype(np.int8, copy=False)


def check_generator(seed) -> np.random.Generator:
    """``None``, an int, or a Generator -> Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, numbers.Integral):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot seed a numpy Generator")
