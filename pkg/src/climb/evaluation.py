"""Evaluation protocol: delta-rank, sparsity buckets, bootstrap bias/variance, timing.

Delta-rank is reported as ``rank_before - rank_after`` for the user's top
recommendation, so removing influential items gives a negative number.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .core import Instance, Method, derive_seed
from .explainers import DEFAULT_RIDGE, make_explainer
from .perturb import DEFAULT_KERNEL_WIDTH, endpoint_values
from .recmodel import InteractionDataset, dense_vector, rank_of, ranks_of, top_recommendation

logger = logging.getLogger(__name__)

DEFAULT_KS = (6, 12, 18, 24, 30)
RANDOM_CONTROL = "RANDOM"
SIGN_CONVENTION = "delta_rank = rank_before - rank_after; negative means the target item fell"
PHASES = ("sampling", "labeling", "solving", "total")

DELTA_RANK_COLUMNS = ("method", "sparsity_rank", "k", "mean", "median", "std", "n")
BIAS_VARIANCE_COLUMNS = ("method", "sparsity_rank", "bias_sq_mean", "variance_mean", "mse_mean", "n")
TIMING_COLUMNS = ("method", "phase", "median_ms", "mean_ms", "n")


class SkipUser(ValueError):
    """The user is outside an operation's domain (e.g. too few items to bootstrap)."""


@dataclass(frozen=True)
class SparsitySegmentation:
    assignments: dict
    boundaries: tuple[tuple[int, int], ...]
    sizes: tuple[int, ...]

    def rank(self, user_id) -> int:
        return self.assignments[user_id]


def segment_by_sparsity(data: InteractionDataset | Sequence[Instance], n_buckets: int = 8) -> SparsitySegmentation:
    """Split users into equal-size buckets by item count; bucket 0 is the sparsest.

    Users are ordered by ``(d', user_id)``.  When the count does not divide
    evenly the extra users go one per bucket starting from bucket 0.
    """
    users = list(data.users if isinstance(data, InteractionDataset) else data)
    if n_buckets < 1:
        raise ValueError("n_buckets must be positive")
    if len(users) < n_buckets:
        raise ValueError(f"{len(users)} users cannot fill {n_buckets} buckets")
    ordered = sorted(users, key=lambda u: (u.d_prime, str(u.user_id)))
    base, extra = divmod(len(ordered), n_buckets)
    sizes = tuple(base + (1 if b < extra else 0) for b in range(n_buckets))
    assignments, boundaries, start = {}, [], 0
    for b, size in enumerate(sizes):
        chunk = ordered[start:start + size]
        for u in chunk:
            assignments[u.user_id] = b
        boundaries.append((chunk[0].d_prime, chunk[-1].d_prime))
        start += size
    return SparsitySegmentation(assignments, tuple(boundaries), sizes)


def _removal_curve(model, instance: Instance, order: Sequence[int], ks: Sequence[int], target_item: int,
                   n_items: int) -> np.ndarray:
    """Delta-rank after removing the first ``k`` items of ``order``; NaN when ``k > d'``."""
    x = dense_vector(instance, n_items)
    r0 = rank_of(model, x, target_item)
    curve = np.full(len(ks), np.nan)
    rows, slots = [], []
    for j, k in enumerate(ks):
        if k == 0:
            curve[j] = 0.0
        elif k <= instance.d_prime:
            xm = x.copy()
            xm[list(order[:k])] = 0.0
            rows.append(xm)
            slots.append(j)
    if rows:
        curve[slots] = r0 - ranks_of(model, np.stack(rows), target_item)
    return curve


def delta_rank_curve(model, instance: Instance, explanation, ks: Sequence[int] = DEFAULT_KS,
                     target_item: int | None = None) -> np.ndarray:
    """Delta-rank of the top recommendation as the top-``k`` attributed items are removed.

    Items are removed by descending coefficient with ties going to the lower
    item index.  Entries for ``k > d'`` are NaN (missing).
    """
    n_items = model.n_items
    if target_item is None:
        target_item = explanation.target_item
    if target_item is None:
        target_item = top_recommendation(model, instance, n_items)
    if tuple(explanation.item_indices) != instance.active_items:
        raise ValueError("explanation does not belong to this instance")
    return _removal_curve(model, instance, explanation.top_items(instance.d_prime), ks, target_item, n_items)


def random_removal_control(model, instance: Instance, ks: Sequence[int] = DEFAULT_KS, seed=None,
                           target_item: int | None = None) -> np.ndarray:
    """Same as :func:`delta_rank_curve` but removing items in a random order."""
    n_items = model.n_items
    if target_item is None:
        target_item = top_recommendation(model, instance, n_items)
    order = np.random.default_rng(seed).permutation(np.asarray(instance.active_items))
    return _removal_curve(model, instance, order.tolist(), ks, target_item, n_items)


@dataclass(frozen=True)
class BiasVariance:
    bias_sq: float
    variance: float
    mse: float


def bootstrap_instances(instance: Instance, P: int, rho: float, rng: np.random.Generator) -> list[Instance]:
    """``P`` copies of ``instance`` with each item dropped independently with probability ``rho``.

    Draws leaving fewer than two items are rejected and redrawn.
    """
    active = instance.indices
    out = []
    for p in range(P):
        while True:
            keep = rng.random(len(active)) >= rho
            if keep.sum() >= 2:
                break
        out.append(Instance((instance.user_id, p), tuple(active[keep].tolist())))
    return out


def bias_variance(model, instance: Instance, target_item: int, method, P: int = 50, rho: float = 0.1, seed=None,
                  n_samples: int = 1000, kernel_width: float = DEFAULT_KERNEL_WIDTH,
                  ridge: float = DEFAULT_RIDGE) -> BiasVariance:
    """Plug-in bias/variance of an explainer's prediction at its own instance.

    Each bootstrap instance gets its own explanation; its fitted value at the
    all-ones mask (intercept plus coefficient sum) is compared with ``f(x)``
    of the unperturbed instance.
    """
    if instance.d_prime < 3:
        raise SkipUser(f"user {instance.user_id!r} has d'={instance.d_prime} < 3")
    if P < 2:
        raise ValueError("need at least two bootstrap replicates")
    if not 0 <= rho < 1:
        raise ValueError(f"drop probability must lie in [0, 1), got {rho}")
    rng = np.random.default_rng(seed)
    fx, _ = endpoint_values(model, instance, target_item)
    fitted = np.empty(P)
    for p, xp in enumerate(bootstrap_instances(instance, P, rho, rng)):
        explainer = make_explainer(method, model, n_samples, kernel_width, ridge,
                                   random_state=int(rng.integers(2 ** 63)))
        fitted[p] = explainer.fit(xp, target_item).explanation_.fitted_value
    mean = fitted.mean()
    bias_sq = (fx - mean) ** 2
    variance = float(np.mean((fitted - mean) ** 2))
    return BiasVariance(float(bias_sq), variance, float(bias_sq + variance))


# --- reports -----------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _csv_text(columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _summary(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    n = len(arr)
    if n == 0:
        return {"mean": math.nan, "median": math.nan, "std": math.nan, "n": 0}
    return {"mean": float(arr.mean()), "median": float(np.median(arr)),
            "std": float(arr.std(ddof=1)) if n > 1 else 0.0, "n": n}


@dataclass
class DeltaRankReport:
    rows: list = field(default_factory=list)
    ks: tuple = DEFAULT_KS

    def cell(self, method, sparsity_rank: int, k: int) -> dict | None:
        method = method if method == RANDOM_CONTROL else Method.parse(method).value
        for row in self.rows:
            if row["method"] == method and row["sparsity_rank"] == sparsity_rank and row["k"] == k:
                return row
        return None

    def to_csv(self) -> str:
        return _csv_text(DELTA_RANK_COLUMNS, self.rows)


@dataclass
class BiasVarianceReport:
    rows: list = field(default_factory=list)
    per_user: list = field(default_factory=list)
    P: int = 50
    rho: float = 0.1

    def cell(self, method, sparsity_rank: int) -> dict | None:
        method = Method.parse(method).value
        for row in self.rows:
            if row["method"] == method and row["sparsity_rank"] == sparsity_rank:
                return row
        return None

    def to_csv(self) -> str:
        return _csv_text(BIAS_VARIANCE_COLUMNS, self.rows)


@dataclass
class TimingReport:
    rows: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)

    def cell(self, method, phase: str) -> dict | None:
        method = Method.parse(method).value
        for row in self.rows:
            if row["method"] == method and row["phase"] == phase:
                return row
        return None

    def to_csv(self) -> str:
        return _csv_text(TIMING_COLUMNS, self.rows)


def bench_explainers(model, users: Sequence[Instance], n_samples: int = 5000, repetitions: int = 3, seed: int = 0,
                     methods: Sequence = tuple(Method), kernel_width: float = DEFAULT_KERNEL_WIDTH,
                     ridge: float = DEFAULT_RIDGE, targets: dict | None = None) -> TimingReport:
    """Wall-clock per explainer and phase over ``users x repetitions`` fits.

    Methods are interleaved within each repetition so that drift in machine
    load affects all of them alike, and share one seed per fit so LIME and
    CLIMB draw identical masks.
    """
    if repetitions < 3:
        raise ValueError(f"repetitions must be >= 3, got {repetitions}")
    methods = [Method.parse(m) for m in methods]
    samples = {(m.value, ph): [] for m in methods for ph in PHASES}
    targets = dict(targets or {})
    for user in users:
        if user.user_id not in targets:
            targets[user.user_id] = top_recommendation(model, user, model.n_items)
    for rep in range(repetitions):
        for ui, user in enumerate(users):
            for m in methods:
                explainer = make_explainer(m, model, n_samples, kernel_width, ridge,
                                           random_state=derive_seed(seed, "bench", ui * repetitions + rep))
                t0 = time.perf_counter()
                explainer.fit(user, targets[user.user_id])
                total = time.perf_counter() - t0
                for ph, secs in explainer.timings_.items():
                    samples[(m.value, ph)].append(secs * 1e3)
                samples[(m.value, "total")].append(total * 1e3)
    rows = []
    for (method, phase), values in samples.items():
        rows.append({"method": method, "phase": phase, "median_ms": float(statistics.median(values)),
                     "mean_ms": float(statistics.fmean(values)), "n": len(values)})
    return TimingReport(rows, samples)


# --- full protocol -----------------------------------------------------------


@dataclass
class EvalConfig:
    methods: tuple = ("lime", "shap", "climb")
    ks: tuple = DEFAULT_KS
    n_samples: int = 5000
    kernel_width: float = DEFAULT_KERNEL_WIDTH
    ridge: float = DEFAULT_RIDGE
    P: int = 50
    rho: float = 0.1
    buckets: int = 8
    bias_variance_cap: int = 1000
    seed: int = 0
    random_control: bool = True
    bench_users: int = 0
    bench_repetitions: int = 3
    jobs: int = 1

    def __post_init__(self):
        self.methods = tuple(Method.parse(m).value for m in self.methods)
        self.ks = tuple(int(k) for k in self.ks)
        if any(k < 0 for k in self.ks):
            raise ValueError("ks must be non-negative")
        if self.n_samples < 1 or self.P < 2 or not 0 <= self.rho < 1 or self.buckets < 1:
            raise ValueError("invalid evaluation configuration")

    @classmethod
    def from_dict(cls, data: dict) -> "EvalConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvaluationResult:
    delta_rank: DeltaRankReport
    bias_variance: BiasVarianceReport
    timing: TimingReport
    segmentation: SparsitySegmentation | None
    failures: list
    skipped: list
    config: EvalConfig

    def to_json(self, manifest: dict | None = None) -> dict:
        seg = self.segmentation
        return {
            "manifest": manifest or {},
            "config": self.config.to_dict(),
            "sign_convention": SIGN_CONVENTION,
            "seeds": {"master": self.config.seed,
                      "streams": ["explain-<METHOD>", "random-removal", "bias-variance", "bv-population",
                                  "bench"]},
            "segments": None if seg is None else [
                {"sparsity_rank": b, "n_users": seg.sizes[b], "min_items": lo, "max_items": hi}
                for b, (lo, hi) in enumerate(seg.boundaries)],
            "delta_rank": self.delta_rank.rows,
            "bias_variance": self.bias_variance.rows,
            "timing": self.timing.rows,
            "failures": self.failures,
            "skipped": self.skipped,
        }


def _evaluate_user(model, user: Instance, index: int, sparsity_rank: int, in_bv: bool, config: EvalConfig) -> dict:
    out = {"user_id": user.user_id, "sparsity_rank": sparsity_rank, "curves": {}, "bv": {}, "errors": [],
           "skipped": []}
    seed = config.seed
    try:
        target = top_recommendation(model, user, model.n_items)
    except Exception as exc:  # noqa: BLE001 - recorded per user, never aborts the run
        out["errors"].append({"stage": "target", "error": repr(exc)})
        return out
    out["target_item"] = target
    for method in config.methods:
        try:
            explainer = make_explainer(method, model, config.n_samples, config.kernel_width, config.ridge,
                                       random_state=derive_seed(seed, f"explain-{method}", index))
            explanation = explainer.fit(user, target).explanation_
            out["curves"][method] = delta_rank_curve(model, user, explanation, config.ks, target)
        except Exception as exc:  # noqa: BLE001
            out["errors"].append({"stage": f"delta-rank-{method}", "error": repr(exc)})
    if config.random_control and config.methods:
        try:
            out["curves"][RANDOM_CONTROL] = random_removal_control(
                model, user, config.ks, derive_seed(seed, "random-removal", index), target)
        except Exception as exc:  # noqa: BLE001
            out["errors"].append({"stage": "random-removal", "error": repr(exc)})
    if in_bv:
        # one seed for all methods: every method sees the same bootstrap instances
        for method in config.methods:
            try:
                out["bv"][method] = bias_variance(model, user, target, method, config.P, config.rho,
                                                  derive_seed(seed, "bias-variance", index),
                                                  config.n_samples, config.kernel_width, config.ridge)
            except SkipUser as exc:
                out["skipped"].append({"stage": f"bias-variance-{method}", "reason": str(exc)})
            except Exception as exc:  # noqa: BLE001
                out["errors"].append({"stage": f"bias-variance-{method}", "error": repr(exc)})
    return out


def run_full_evaluation(dataset: InteractionDataset, model, config: EvalConfig | None = None,
                        users: Sequence[Instance] | None = None) -> EvaluationResult:
    """Segment users, explain each user's top recommendation, and aggregate the metrics.

    Per-user work depends only on the master seed and the user's position,
    so reports are identical for any ``config.jobs``.  A user whose
    evaluation raises is recorded in ``failures`` and skipped.
    """
    config = config or EvalConfig()
    users = list(dataset.users if users is None else users)
    if not config.methods:
        empty = EvaluationResult(DeltaRankReport(ks=config.ks), BiasVarianceReport(P=config.P, rho=config.rho),
                                 TimingReport(), None, [], [], config)
        return empty

    seg = segment_by_sparsity(users, config.buckets)
    order = sorted(range(len(users)), key=lambda i: str(users[i].user_id))
    users = [users[i] for i in order]
    n_bv = min(config.bias_variance_cap, len(users))
    pick = np.random.default_rng(derive_seed(config.seed, "bv-population", 0)).choice(len(users), n_bv, replace=False)
    in_bv = np.zeros(len(users), dtype=bool)
    in_bv[pick] = True

    tasks = (delayed(_evaluate_user)(model, u, i, seg.rank(u.user_id), bool(in_bv[i]), config)
             for i, u in enumerate(users))
    results = Parallel(n_jobs=config.jobs)(tasks) if config.jobs != 1 else [
        _evaluate_user(model, u, i, seg.rank(u.user_id), bool(in_bv[i]), config) for i, u in enumerate(users)]

    curve_methods = list(config.methods) + ([RANDOM_CONTROL] if config.random_control else [])
    dr_values = {(m, b, k): [] for m in curve_methods for b in range(config.buckets) for k in config.ks}
    bv_values = {(m, b): [] for m in config.methods for b in range(config.buckets)}
    per_user, failures, skipped = [], [], []
    for res in results:
        b = res["sparsity_rank"]
        for err in res["errors"]:
            failures.append({"user_id": res["user_id"], **err})
        for skip in res["skipped"]:
            skipped.append({"user_id": res["user_id"], **skip})
        for m, curve in res["curves"].items():
            for k, v in zip(config.ks, curve):
                if not math.isnan(v):
                    dr_values[(m, b, k)].append(float(v))
        for m, bv in res["bv"].items():
            bv_values[(m, b)].append(bv)
            per_user.append({"user_id": res["user_id"], "method": m, "sparsity_rank": b, **asdict(bv)})

    dr_rows = [{"method": m, "sparsity_rank": b, "k": k, **_summary(dr_values[(m, b, k)])}
               for m in curve_methods for b in range(config.buckets) for k in config.ks]
    bv_rows = []
    for m in config.methods:
        for b in range(config.buckets):
            vals = bv_values[(m, b)]
            n = len(vals)
            mean = (lambda attr: float(np.mean([getattr(v, attr) for v in vals])) if n else math.nan)
            bv_rows.append({"method": m, "sparsity_rank": b, "bias_sq_mean": mean("bias_sq"),
                            "variance_mean": mean("variance"), "mse_mean": mean("mse"), "n": n})

    timing = TimingReport()
    if config.bench_users > 0:
        bench_pool = [users[i] for i in sorted(pick[:config.bench_users])]
        targets = {r["user_id"]: r["target_item"] for r in results if "target_item" in r}
        timing = bench_explainers(model, bench_pool, config.n_samples, config.bench_repetitions, config.seed,
                                  config.methods, config.kernel_width, config.ridge, targets)

    return EvaluationResult(DeltaRankReport(dr_rows, config.ks),
                            BiasVarianceReport(bv_rows, per_user, config.P, config.rho),
                            timing, seg, failures, skipped, config)
