"""Upstream prediction models used to produce the predicted outcomes."""

from .base import ExternalModel, PredictionModel, predict
from .forest import RandomForestConfig, RandomForestModel, train_random_forest
from .splines import (
    SplineAdditiveConfig,
    SplineAdditiveModel,
    natural_spline_basis,
    train_spline_additive,
)

__all__ = [
    "ExternalModel",
    "PredictionModel",
    "RandomForestConfig",
    "RandomForestModel",
    "SplineAdditiveConfig",
    "SplineAdditiveModel",
    "natural_spline_basis",
    "predict",
    "train_random_forest",
    "train_spline_additive",
]
