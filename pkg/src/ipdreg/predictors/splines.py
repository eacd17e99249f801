"""Additive regression on natural cubic spline bases.

Each covariate gets its own natural cubic spline (cubic between knots,
linear beyond the boundary knots) and the pieces are fitted jointly by
unpenalized least squares together with one shared intercept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import DimensionMismatchError, FloatArray, as_matrix, as_vector, ols_fit
from .base import PredictionModel


@dataclass(frozen=True)
class SplineAdditiveConfig:
    interior_knots: int = 10
    boundary_rule: str = "natural"

    def __post_init__(self):
        if self.interior_knots < 0:
            raise ValueError("interior_knots must be >= 0")
        if self.boundary_rule != "natural":
            raise ValueError(f"unsupported boundary rule {self.boundary_rule!r}")


def place_knots(x: FloatArray, interior_knots: int) -> FloatArray:
    """Boundary knots at min/max, interior knots at equally spaced quantiles."""
    probs = np.linspace(0.0, 1.0, interior_knots + 2)
    knots = np.unique(np.quantile(x, probs))
    return knots


def natural_spline_basis(x: FloatArray, knots: FloatArray) -> FloatArray:
    """Truncated-power natural cubic spline basis without the constant.

    Columns are ``x`` followed by ``d_k(x) - d_{K-1}(x)`` for the first
    ``K - 2`` knots, where
    ``d_k(x) = ((x - t_k)_+^3 - (x - t_K)_+^3) / (t_K - t_k)``.
    Every column is linear outside ``[t_1, t_K]``.
    """
    x = np.asarray(x, dtype=np.float64)
    K = len(knots)
    cols = [x]
    if K >= 3:
        last = knots[-1]
        tail = np.maximum(x - last, 0.0) ** 3

        def d(k):
            return (np.maximum(x - knots[k], 0.0) ** 3 - tail) / (last - knots[k])

        d_ref = d(K - 2)
        cols.extend(d(k) - d_ref for k in range(K - 2))
    return np.column_stack(cols)


class SplineAdditiveModel(PredictionModel):
    kind = "spline_additive"

    def __init__(self, knots: list[FloatArray], coefficients: FloatArray, fitted_values: FloatArray):
        self.knots = knots
        self.coefficients = coefficients
        self.fitted_values = fitted_values
        self.n_features = len(knots)

    def design(self, Z: FloatArray) -> FloatArray:
        blocks = [np.ones((Z.shape[0], 1))]
        blocks += [natural_spline_basis(Z[:, j], k) for j, k in enumerate(self.knots)]
        return np.hstack(blocks)

    def _predict(self, Z):
        return self.design(Z) @ self.coefficients


def train_spline_additive(Z, y, config: SplineAdditiveConfig | None = None) -> SplineAdditiveModel:
    """Least-squares additive natural-spline fit.

    Raises :class:`~ipdreg.numerics.RankDeficiencyError` when the basis is
    too rich for the number of training rows.
    """
    config = config or SplineAdditiveConfig()
    Z = as_matrix(Z, "Z")
    y = as_vector(y, "y")
    if Z.shape[0] != y.shape[0]:
        raise DimensionMismatchError(f"Z has {Z.shape[0]} rows but y has length {y.shape[0]}")
    knots = [place_knots(Z[:, j], config.interior_knots) for j in range(Z.shape[1])]
    model = SplineAdditiveModel(knots, np.empty(0), np.empty(0))
    B = model.design(Z)
    fit = ols_fit(B, y, variance_denominator=max(1, B.shape[0] - B.shape[1]))
    model.coefficients = fit.coefficients
    model.fitted_values = y - fit.residuals
    return model
