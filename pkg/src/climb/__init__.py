"""Local explanations (LIME, KernelSHAP, CLIMB) for black-box recommenders."""

from .core import Catalog, DimensionError, Explanation, Instance, Method, apply_mask, derive_seed, to_interpretable
from .explainers import (ClimbExplainer, LimeExplainer, ShapExplainer, exact_shapley, explain_climb, explain_lime,
                         explain_shap, make_explainer)
from .recmodel import (CoocRecommender, InteractionDataset, fit_cooc, generate_synthetic, ingest_interactions, rank_of,
                       score, top_recommendation)

__version__ = "0.1.0"

__all__ = [
    "Catalog", "ClimbExplainer", "CoocRecommender", "DimensionError", "Explanation", "Instance", "InteractionDataset",
    "LimeExplainer", "Method", "ShapExplainer", "apply_mask", "derive_seed", "exact_shapley", "explain_climb",
    "explain_lime", "explain_shap", "fit_cooc", "generate_synthetic", "ingest_interactions", "make_explainer",
    "rank_of", "score", "to_interpretable", "top_recommendation",
]
