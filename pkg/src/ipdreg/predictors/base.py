from __future__ import annotations

from typing import Callable

import numpy as np

from ..numerics import DimensionMismatchError, FloatArray, as_matrix


class PredictionModel:
    """A trained map from feature rows to outcome predictions."""

    kind: str = "abstract"
    n_features: int

    def predict(self, Z) -> FloatArray:
        Z = as_matrix(Z, "Z")
        if Z.shape[1] != self.n_features:
            raise DimensionMismatchError(
                f"{self.kind} model was trained on {self.n_features} columns, got {Z.shape[1]}"
            )
        out = self._predict(Z)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"{self.kind} model produced non-finite predictions")
        return out

    def _predict(self, Z: FloatArray) -> FloatArray:
        raise NotImplementedError


class ExternalModel(PredictionModel):
    """Wraps a prediction function supplied from outside (a true black box)."""

    kind = "external"

    def __init__(self, fn: Callable[[FloatArray], FloatArray], n_features: int):
        self.fn = fn
        self.n_features = n_features

    def _predict(self, Z):
        return np.asarray(self.fn(Z), dtype=np.float64).reshape(Z.shape[0])


def predict(model: PredictionModel, Z) -> FloatArray:
    return model.predict(Z)
