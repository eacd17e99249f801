"""Linear-model inference when most outcomes are machine-learning predictions."""

from .estimators import (
    METHODS,
    Dataset,
    FitResult,
    MomentSet,
    RelationshipFit,
    compute_moments,
    contrast_inference,
    estimate,
    estimate_classical,
    estimate_naive,
    estimate_oracle,
    estimate_postpi,
    estimate_proposed,
    fit_relationship,
    pseudo_outcomes,
    wald_interval,
)
from .numerics import RngSeed, ols_fit
from .simulation import SimSetting, render_table, run_monte_carlo, run_replicate

__version__ = "0.1.0"
