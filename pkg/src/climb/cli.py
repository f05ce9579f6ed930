"""Command-line front end: ``climb gen-data | train | explain | evaluate | bench``.

Exit codes: 0 on success, 1 on runtime failures (unreadable files, unknown
users or items), 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import Instance, Method
from .evaluation import EvalConfig, bench_explainers, run_full_evaluation
from .explainers import make_explainer
from .recmodel import (ConfigurationError, CoocRecommender, IngestionError, InteractionDataset, generate_synthetic,
                       ingest_interactions, top_recommendation)

logger = logging.getLogger("climb")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
COMPLETENESS_TOL = 1e-8


class UsageError(Exception):
    pass


class RunError(Exception):
    pass


def manifest(command: str, config: dict) -> dict:
    return {"tool": "climb", "version": __version__, "command": command, "config": config,
            "seed": config.get("seed")}


def _write_json(path, payload) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _load(args):
    try:
        model = CoocRecommender.load(args.model)
        data = ingest_interactions(args.data, args.threshold)
    except IngestionError as exc:
        raise RunError(str(exc)) from exc
    return model, _align(data, model)


def _align(data: InteractionDataset, model: CoocRecommender) -> InteractionDataset:
    """Re-express the dataset's users over the model's catalog, matching items by label."""
    index = {label: i for i, label in enumerate(model.catalog_.item_labels)}
    users = []
    for u in data.users:
        labels = [data.catalog.label(t) for t in u.active_items]
        missing = [lab for lab in labels if lab not in index]
        if missing:
            raise RunError(f"user {u.user_id!r} has items unknown to the model: {missing[:5]}")
        users.append(Instance(u.user_id, tuple(sorted(index[lab] for lab in labels))))
    return InteractionDataset.from_users(model.catalog_, users)


def _item_index(model, item: str) -> int:
    labels = model.catalog_.item_labels
    if item in labels:
        return labels.index(item)
    raise RunError(f"unknown item {item!r}")


def cmd_gen_data(args) -> int:
    try:
        data = generate_synthetic(args.users, args.items, args.zipf, args.mean_basket, args.seed)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    data.to_csv(args.out)
    config = {"users": args.users, "items": args.items, "zipf": args.zipf, "mean_basket": args.mean_basket,
              "seed": args.seed}
    _write_json(f"{args.out}.manifest.json", manifest("gen-data", config))
    logger.info("wrote %d users x %d items to %s", data.n_users, data.n_items, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        data = ingest_interactions(args.data, args.threshold)
        model = CoocRecommender(shrinkage=args.shrinkage, temperature=args.tau, alpha=args.alpha).fit(data)
    except IngestionError as exc:
        raise RunError(str(exc)) from exc
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    config = {"data": str(args.data), "threshold": args.threshold, "shrinkage": args.shrinkage, "tau": args.tau,
              "alpha": args.alpha, "seed": None}
    model.save(args.out, manifest("train", config))
    logger.info("model over %d items (%d users) saved to %s", model.n_items, model.n_users_, args.out)
    return EXIT_OK


def cmd_explain(args) -> int:
    model, data = _load(args)
    try:
        user = data.user(args.user)
    except KeyError:
        raise RunError(f"unknown user {args.user!r}") from None
    target = _item_index(model, args.target) if args.target is not None else top_recommendation(model, user)
    methods = list(Method) if args.method == "all" else [Method.parse(args.method)]
    config = {"user": str(args.user), "method": args.method, "samples": args.samples, "seed": args.seed,
              "target": args.target}
    out = []
    for method in methods:
        explainer = make_explainer(method, model, args.samples, random_state=args.seed)
        expl = explainer.fit(user, target).explanation_
        if method.constrained and abs(expl.completeness_residual) > COMPLETENESS_TOL:
            raise RunError(f"{method.value} explanation violates completeness by {expl.completeness_residual:.3e}")
        payload = expl.to_dict(model.catalog_)
        payload["manifest"] = manifest("explain", config)
        out.append(json.dumps(payload, sort_keys=True))
    text = "\n".join(out) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


_FLAG_TO_CONFIG = {"methods": "methods", "ks": "ks", "samples": "n_samples", "P": "P", "rho": "rho",
                   "buckets": "buckets", "bv_cap": "bias_variance_cap", "seed": "seed", "jobs": "jobs",
                   "bench_users": "bench_users"}
_CONFIG_ALIASES = {"samples": "n_samples", "bias_variance_population_cap": "bias_variance_cap",
                   "bv_cap": "bias_variance_cap", "master_seed": "seed"}


def build_config(args) -> EvalConfig:
    raw = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError("config must be a JSON object")
        raw = {_CONFIG_ALIASES.get(k, k): v for k, v in raw.items()}
    for flag, key in _FLAG_TO_CONFIG.items():
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = value
    try:
        return EvalConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid evaluation config: {exc}") from exc


def cmd_evaluate(args) -> int:
    config = build_config(args)
    model, data = _load(args)
    result = run_full_evaluation(data, model, config)
    out = Path(args.out_dir)
    _write_text(out / "delta_rank.csv", result.delta_rank.to_csv())
    _write_text(out / "bias_variance.csv", result.bias_variance.to_csv())
    _write_text(out / "timing.csv", result.timing.to_csv())
    run_config = config.to_dict()
    run_config.pop("jobs")
    _write_json(out / "report.json", result.to_json(manifest("evaluate", run_config)))
    if result.failures:
        logger.warning("%d per-user failures recorded in report.json", len(result.failures))
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.reps < 3:
        raise UsageError("--reps must be at least 3")
    model, data = _load(args)
    rng = np.random.default_rng(args.seed)
    users = list(data.users)
    if args.min_items:
        users = [u for u in users if u.d_prime >= args.min_items]
    if not users:
        raise RunError("no users satisfy the benchmark filter")
    pick = sorted(rng.choice(len(users), min(args.n_users, len(users)), replace=False))
    report = bench_explainers(model, [users[i] for i in pick], args.samples, args.reps, args.seed)
    out = Path(args.out_dir)
    _write_text(out / "timing.csv", report.to_csv())
    config = {"n_users": args.n_users, "samples": args.samples, "reps": args.reps, "seed": args.seed,
              "min_items": args.min_items}
    _write_json(out / "timing.manifest.json", manifest("bench", config))
    lime, climb = report.cell("lime", "solving"), report.cell("climb", "solving")
    if lime and climb and lime["median_ms"] > 0:
        print(f"CLIMB/LIME solve-phase median ratio: {climb['median_ms'] / lime['median_ms']:.3f}")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="climb", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic interaction CSV")
    p.add_argument("--users", type=int, default=1000)
    p.add_argument("--items", type=int, default=2000)
    p.add_argument("--zipf", type=float, default=1.1)
    p.add_argument("--mean-basket", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit the co-occurrence recommender")
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=float, default=4.0)
    p.add_argument("--shrinkage", type=float, default=10.0)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    def model_and_data(p):
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--threshold", type=float, default=4.0)

    p = sub.add_parser("explain", help="explain one user's recommendation")
    model_and_data(p)
    p.add_argument("--user", required=True)
    p.add_argument("--method", choices=["lime", "shap", "climb", "all"], default="climb")
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target", help="item label; defaults to the top recommendation")
    p.add_argument("--out")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", help="run the full evaluation protocol")
    model_and_data(p)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--methods", type=lambda s: [m for m in s.split(",") if m])
    p.add_argument("--ks", type=lambda s: [int(k) for k in s.split(",") if k])
    p.add_argument("--samples", type=int)
    p.add_argument("-P", "--bootstraps", dest="P", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--buckets", type=int)
    p.add_argument("--bv-cap", type=int)
    p.add_argument("--bench-users", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="time the three explainers")
    model_and_data(p)
    p.add_argument("--n-users", type=int, default=20)
    p.add_argument("--min-items", type=int, default=0)
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"climb {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RunError, OSError, ValueError) as exc:
        print(f"climb {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
