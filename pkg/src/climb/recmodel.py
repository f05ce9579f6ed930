"""The black-box recommender being explained, plus the data it is fit on.

:class:`CoocRecommender` is a desk-scale stand-in for a neural recommender.
It keeps the two properties the explainers care about: at the zero input it
ranks items purely by training popularity, and its softmax output saturates,
which creates locally flat regions.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import Catalog, DimensionError, Instance
from ._validation import check_binary_matrix

logger = logging.getLogger(__name__)

MODEL_FORMAT = "climb-cooc"
MODEL_VERSION = 1


class ConfigurationError(ValueError):
    pass


class IngestionError(ValueError):
    pass


class ScoringModel(Protocol):
    """Anything that maps binary user vectors ``(n, d)`` to item scores ``(n, d)``."""

    def predict_proba(self, X) -> np.ndarray: ...


@dataclass(frozen=True)
class InteractionDataset:
    catalog: Catalog
    users: tuple[Instance, ...]
    popularity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        pop = np.asarray(self.popularity, dtype=np.int64)
        if pop.shape != (self.catalog.item_count,):
            raise ValueError("popularity must have one entry per catalog item")
        counts = np.zeros(self.catalog.item_count, dtype=np.int64)
        for user in self.users:
            user.check_catalog(self.catalog)
            counts[user.indices] += 1
        if not np.array_equal(counts, pop):
            raise ValueError("popularity does not match user interactions")
        pop.setflags(write=False)
        object.__setattr__(self, "popularity", pop)

    @classmethod
    def from_users(cls, catalog: Catalog, users: Sequence[Instance]) -> "InteractionDataset":
        pop = np.zeros(catalog.item_count, dtype=np.int64)
        for user in users:
            pop[user.indices] += 1
        return cls(catalog, tuple(users), pop)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return self.catalog.item_count

    def to_csr(self) -> sp.csr_matrix:
        indptr = np.zeros(self.n_users + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([u.d_prime for u in self.users])
        indices = np.concatenate([u.indices for u in self.users]) if self.users else np.zeros(0, np.intp)
        data = np.ones(len(indices), dtype=np.float64)
        return sp.csr_matrix((data, indices, indptr), shape=(self.n_users, self.n_items))

    def user(self, user_id) -> Instance:
        for u in self.users:
            if u.user_id == user_id or str(u.user_id) == str(user_id):
                return u
        raise KeyError(f"unknown user {user_id!r}")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user", "item"])
            for u in self.users:
                for t in u.active_items:
                    writer.writerow([u.user_id, self.catalog.label(t)])


def generate_synthetic(n_users: int = 1000, n_items: int = 2000, zipf_exponent: float = 1.1,
                       mean_basket: float = 20.0, seed: int = 7, *, affinity: float = 0.5,
                       basket_sigma: float = 0.8, block_size: int = 40) -> InteractionDataset:
    """Long-tail implicit-feedback data with a planted block structure.

    Item ``t`` has Zipf popularity weight ``(t + 1) ** -zipf_exponent``.  Basket
    sizes are log-normal with mean ``mean_basket`` and clipped to
    ``[2, n_items // 2]``.  Each basket starts from one anchor item drawn by
    popularity; a fraction ``affinity`` of the remaining slots is filled from
    the anchor's block, the rest from the global popularity distribution.
    """
    if n_users < 16:
        raise ConfigurationError(f"n_users must be >= 16, got {n_users}")
    if n_items < 32:
        raise ConfigurationError(f"n_items must be >= 32, got {n_items}")
    if not zipf_exponent > 0:
        raise ConfigurationError(f"zipf_exponent must be > 0, got {zipf_exponent}")
    if not mean_basket >= 2:
        raise ConfigurationError(f"mean_basket must be >= 2, got {mean_basket}")
    if not 0 <= affinity <= 1:
        raise ConfigurationError(f"affinity must lie in [0, 1], got {affinity}")

    rng = np.random.default_rng(seed)
    weight = np.arange(1, n_items + 1, dtype=np.float64) ** -zipf_exponent
    prob = weight / weight.sum()

    block_size = max(2, min(block_size, n_items // 4))
    order = rng.permutation(n_items)
    n_blocks = n_items // block_size
    block_of = np.empty(n_items, dtype=np.intp)
    block_of[order] = np.arange(n_items) % n_blocks
    blocks = [np.flatnonzero(block_of == b) for b in range(n_blocks)]

    mu = math.log(mean_basket) - basket_sigma ** 2 / 2
    raw = rng.lognormal(mu, basket_sigma, size=n_users)
    sizes = np.clip(np.rint(raw).astype(np.int64), 2, n_items // 2)

    users = []
    for u in range(n_users):
        size = int(sizes[u])
        anchor = int(rng.choice(n_items, p=prob))
        chosen = {anchor}
        block = blocks[block_of[anchor]]
        block = block[block != anchor]
        n_aff = min(int(rng.binomial(size - 1, affinity)), len(block))
        if n_aff:
            bp = prob[block] / prob[block].sum()
            chosen.update(int(i) for i in rng.choice(block, size=n_aff, replace=False, p=bp))
        n_rest = size - len(chosen)
        if n_rest:
            p_rest = prob.copy()
            p_rest[list(chosen)] = 0.0
            p_rest /= p_rest.sum()
            chosen.update(int(i) for i in rng.choice(n_items, size=n_rest, replace=False, p=p_rest))
        users.append(Instance(f"u{u:05d}", tuple(sorted(chosen))))

    catalog = Catalog(n_items, tuple(f"i{t:05d}" for t in range(n_items)))
    return InteractionDataset.from_users(catalog, users)


_USER_COLUMNS = ("user", "user_id", "userid")
_ITEM_COLUMNS = ("item", "item_id", "itemid", "movieid", "movie_id")


def _natural_key(label: str):
    return [(0, int(tok), "") if tok.isdigit() else (1, 0, tok) for tok in re.split(r"(\d+)", label) if tok]


def ingest_interactions(path, rating_threshold: float = 4.0) -> InteractionDataset:
    """Read an interaction CSV (``user,item[,rating[,timestamp]]``).

    Rows rated below ``rating_threshold`` are dropped, duplicates collapse to
    one interaction, users with fewer than two kept items are removed, and
    users and items are re-indexed densely in natural label order.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc

    baskets: dict[str, set[str]] = {}
    n_rows = n_kept = 0
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise IngestionError(f"{path}: unreadable header: {exc}") from exc
        cols = [h.strip().lower() for h in header]
        user_col = next((cols.index(c) for c in _USER_COLUMNS if c in cols), None)
        item_col = next((cols.index(c) for c in _ITEM_COLUMNS if c in cols), None)
        if user_col is None or item_col is None:
            raise IngestionError(f"{path}: header {header!r} lacks user and item columns")
        rating_col = cols.index("rating") if "rating" in cols else None
        width = max(c for c in (user_col, item_col, rating_col) if c is not None) + 1

        line = 1
        try:
            for line, row in enumerate(reader, start=2):
                if not row or all(not cell.strip() for cell in row):
                    continue
                if len(row) < width:
                    raise IngestionError(f"{path}:{line}: expected at least {width} fields, got {len(row)}")
                n_rows += 1
                if rating_col is not None:
                    try:
                        rating = float(row[rating_col])
                    except ValueError:
                        raise IngestionError(f"{path}:{line}: bad rating {row[rating_col]!r}") from None
                    if rating < rating_threshold:
                        continue
                n_kept += 1
                baskets.setdefault(row[user_col].strip(), set()).add(row[item_col].strip())
        except (csv.Error, UnicodeDecodeError) as exc:
            raise IngestionError(f"{path}:{line}: {exc}") from exc

    kept = {u: items for u, items in baskets.items() if len(items) >= 2}
    logger.info("%s: %d rows, %d kept at threshold %.2f, %d/%d users with >= 2 items",
                path, n_rows, n_kept, rating_threshold, len(kept), len(baskets))
    if not kept:
        raise IngestionError(f"{path}: no user has two or more kept interactions")

    labels = sorted({i for items in kept.values() for i in items}, key=_natural_key)
    if len(labels) < 2:
        raise IngestionError(f"{path}: fewer than two distinct items")
    index = {label: t for t, label in enumerate(labels)}
    catalog = Catalog(len(labels), tuple(labels))
    users = [Instance(u, tuple(sorted(index[i] for i in kept[u]))) for u in sorted(kept, key=_natural_key)]
    return InteractionDataset.from_users(catalog, users)


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shift = logits.max(axis=1, keepdims=True)
    z = logits - shift
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class CoocRecommender(BaseEstimator):
    """Softmax scorer over shifted-PMI item co-occurrence.

    For a binary user vector ``x`` with ``m = max(1, sum(x))`` items::

        logits = bias + (x @ W) / m ** alpha
        scores = softmax(logits / temperature)

    where ``W[i, t] = max(0, log(N * C[i, t] / (pop[i] * pop[t] + shrinkage)))``
    off the diagonal and ``bias[t] = log(1 + pop[t])``.

    Parameters
    ----------
    shrinkage : float
        Added to the popularity product in the PMI denominator.
    temperature : float
        Softmax temperature, must be positive.
    alpha : float
        Exponent of the basket-size normalisation.
    """

    def __init__(self, shrinkage: float = 10.0, temperature: float = 1.0, alpha: float = 0.75):
        self.shrinkage = shrinkage
        self.temperature = temperature
        self.alpha = alpha

    def fit(self, X, y=None):
        """Fit from an :class:`InteractionDataset` or a binary user-item matrix."""
        if not self.temperature > 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")
        if self.shrinkage < 0:
            raise ConfigurationError(f"shrinkage must be non-negative, got {self.shrinkage}")
        if isinstance(X, InteractionDataset):
            self.catalog_ = X.catalog
            R = X.to_csr()
        else:
            R = sp.csr_matrix(check_binary_matrix(X, accept_sparse=True), dtype=np.float64)
            self.catalog_ = Catalog.range(R.shape[1])
        n_users, n_items = R.shape
        pop = np.asarray(R.sum(axis=0)).ravel()
        C = (R.T @ R).tocoo()
        off = C.row != C.col
        rows, cols, counts = C.row[off], C.col[off], C.data[off]
        pmi = np.log(n_users * counts / (pop[rows] * pop[cols] + self.shrinkage))
        keep = pmi > 0
        W = sp.csr_matrix((pmi[keep], (rows[keep], cols[keep])), shape=(n_items, n_items))
        W.sort_indices()
        self._set_state(W, np.log1p(pop), pop.astype(np.int64), n_users)
        return self

    def _set_state(self, W: sp.csr_matrix, bias: np.ndarray, popularity: np.ndarray, n_users: int):
        self.weights_ = W
        self.bias_ = np.asarray(bias, dtype=np.float64)
        self.popularity_ = np.asarray(popularity, dtype=np.int64)
        self.n_users_ = int(n_users)
        self.n_features_in_ = len(self.bias_)
        scaled = self.bias_ / self.temperature
        self._bias_shift = float(scaled.max())
        self._bias_exp = np.exp(scaled - self._bias_shift)

    @property
    def n_items(self) -> int:
        check_is_fitted(self, "weights_")
        return self.n_features_in_

    def decision_function(self, X) -> np.ndarray:
        """Pre-softmax logits, shape ``(n, d)``."""
        check_is_fitted(self, "weights_")
        X = check_binary_matrix(X, n_features=self.n_features_in_)
        m = np.maximum(1.0, X.sum(axis=1))
        spread = np.asarray(self.weights_.T @ X.T).T if not sp.issparse(X) else (X @ self.weights_).toarray()
        return self.bias_ + spread / (m ** self.alpha)[:, None]

    def predict_proba(self, X) -> np.ndarray:
        """Softmax item scores, one row per user vector; rows sum to one."""
        return np.exp(_log_softmax_rows(self.decision_function(X) / self.temperature))

    def predict(self, X, n_recommendations: int = 10) -> np.ndarray:
        """Top items per row by descending score (ties by index), excluding the row's own items."""
        X = check_binary_matrix(X, n_features=self.n_items)
        scores = self.predict_proba(X)
        scores[X.astype(bool)] = -np.inf
        order = np.lexsort((np.broadcast_to(np.arange(scores.shape[1]), scores.shape), -scores), axis=1)
        return order[:, :n_recommendations]

    def masked_target_proba(self, active_items, masks, target_item: int) -> np.ndarray:
        """Score of ``target_item`` for every mask over ``active_items``.

        Equivalent to ``predict_proba(apply_masks(...))[:, target_item]`` but
        only touches the catalog columns reachable from ``active_items``; the
        others contribute a precomputed constant to the softmax denominator.
        """
        check_is_fitted(self, "weights_")
        active = np.asarray(active_items, dtype=np.intp)
        masks = np.atleast_2d(np.asarray(masks, dtype=np.float64))
        if masks.shape[1] != len(active):
            raise DimensionError(f"masks have {masks.shape[1]} columns, expected {len(active)}")
        if not 0 <= target_item < self.n_features_in_:
            raise DimensionError(f"target item {target_item} outside catalog of {self.n_features_in_}")
        WA = self.weights_[active]
        cols = np.union1d(WA.indices, [target_item])
        tpos = int(np.searchsorted(cols, target_item))
        tau = self.temperature
        dense = WA[:, cols].toarray()
        dense /= tau

        bias = self.bias_[cols] / tau
        rest = max(self._bias_exp.sum() - self._bias_exp[cols].sum(), 0.0)

        # W >= 0, so every logit lies in [its bias, bias_shift + spread]; shifting
        # by the upper bound lets a single GEMM produce the shifted logits.
        scaled = masks * (np.maximum(1.0, masks.sum(axis=1)) ** -self.alpha)[:, None]
        spread = scaled @ dense.max(axis=1)
        if spread.max(initial=0.0) > 600.0:
            logits = scaled @ dense + bias
            shift = np.maximum(logits.max(axis=1), self._bias_shift)
            logits -= shift[:, None]
        else:
            shift = self._bias_shift + spread
            lhs = np.column_stack([scaled, np.ones(len(masks)), -shift])
            logits = lhs @ np.vstack([dense, bias, np.ones(len(cols))])
        np.exp(logits, out=logits)
        denom = logits.sum(axis=1) + rest * np.exp(self._bias_shift - shift)
        return logits[:, tpos] / denom

    def save(self, path, manifest: dict | None = None) -> None:
        check_is_fitted(self, "weights_")
        upper = sp.triu(self.weights_, k=1).tocoo()
        payload = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "params": self.get_params(),
            "n_users": self.n_users_,
            "labels": list(self.catalog_.item_labels),
            "bias": self.bias_.tolist(),
            "popularity": self.popularity_.tolist(),
            "weights": {"row": upper.row.tolist(), "col": upper.col.tolist(), "value": upper.data.tolist()},
        }
        if manifest is not None:
            payload["manifest"] = manifest
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "CoocRecommender":
        try:
            with open(path, encoding="utf-8") as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise IngestionError(f"cannot load model {path}: {exc}") from exc
        if payload.get("format") != MODEL_FORMAT or payload.get("version") != MODEL_VERSION:
            raise IngestionError(f"{path}: not a {MODEL_FORMAT} v{MODEL_VERSION} model file")
        model = cls(**payload["params"])
        labels = payload["labels"]
        d = len(labels)
        w = payload["weights"]
        row, col, val = np.asarray(w["row"], np.intp), np.asarray(w["col"], np.intp), np.asarray(w["value"], float)
        W = sp.csr_matrix((np.concatenate([val, val]), (np.concatenate([row, col]), np.concatenate([col, row]))),
                          shape=(d, d))
        W.sort_indices()
        model.catalog_ = Catalog(d, tuple(labels))
        model._set_state(W, np.asarray(payload["bias"], float), np.asarray(payload["popularity"]), payload["n_users"])
        return model


def fit_cooc(data: InteractionDataset, shrinkage: float = 10.0, tau: float = 1.0, alpha: float = 0.75) -> CoocRecommender:
    return CoocRecommender(shrinkage=shrinkage, temperature=tau, alpha=alpha).fit(data)


def score(model: ScoringModel, x) -> np.ndarray:
    """Scores of every catalog item for one binary user vector."""
    return np.asarray(model.predict_proba(np.atleast_2d(np.asarray(x, dtype=np.float64))))[0]


def rank_of(model: ScoringModel, x, target_item: int) -> int:
    """1-based rank of ``target_item`` over the full catalog; ties go to the lower index."""
    s = score(model, x)
    if not 0 <= target_item < len(s):
        raise DimensionError(f"target item {target_item} outside catalog of {len(s)}")
    st = s[target_item]
    return int(1 + np.count_nonzero(s > st) + np.count_nonzero(s[:target_item] == st))


def ranks_of(model: ScoringModel, X, target_item: int) -> np.ndarray:
    """Vectorised :func:`rank_of` over the rows of ``X``."""
    S = np.asarray(model.predict_proba(np.atleast_2d(np.asarray(X, dtype=np.float64))))
    st = S[:, [target_item]]
    return 1 + np.count_nonzero(S > st, axis=1) + np.count_nonzero(S[:, :target_item] == st, axis=1)


def dense_vector(instance: Instance, n_items: int, items: Iterable[int] | None = None) -> np.ndarray:
    x = np.zeros(n_items, dtype=np.float64)
    x[list(instance.active_items if items is None else items)] = 1.0
    return x


def top_recommendation(model: ScoringModel, instance: Instance, catalog: Catalog | int | None = None) -> int:
    """Best-scoring item the user has not already interacted with."""
    d = catalog if isinstance(catalog, int) else (catalog.item_count if catalog is not None else model.n_items)
    instance.check_catalog(d)
    s = score(model, dense_vector(instance, d)).copy()
    s[instance.indices] = -np.inf
    return int(np.argmax(s))
