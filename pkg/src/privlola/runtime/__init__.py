"""Evaluator, seeded Laplace sampler and tree-mechanism state."""

from .evaluator import EvaluationModel, Monitor, evaluate
from .rng import CounterRNG, geometric_budget, level_budgets, sample_laplace
from .tree import TreeState, dyadic_cover, dyadic_prefix, tree_release

__all__ = [
    "CounterRNG",
    "EvaluationModel",
    "Monitor",
    "TreeState",
    "dyadic_cover",
    "dyadic_prefix",
    "evaluate",
    "geometric_budget",
    "level_budgets",
    "sample_laplace",
    "tree_release",
]
