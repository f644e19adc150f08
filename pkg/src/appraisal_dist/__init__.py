"""Toolkit for modelling the distribution of human appraisal ratings."""

from ._version import __version__
from .distributions import RatingDistribution, modality, smooth_bimodal, smooth_unimodal, wasserstein1
from .metrics import EvalReport, PredictionSet, evaluate, majority_baseline, random_baseline

__all__ = [
    "__version__",
    "RatingDistribution",
    "EvalReport",
    "PredictionSet",
    "evaluate",
    "majority_baseline",
    "modality",
    "random_baseline",
    "smooth_bimodal",
    "smooth_unimodal",
    "wasserstein1",
]
