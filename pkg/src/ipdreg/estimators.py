"""Regression inference when the large sample only carries predicted outcomes.

Five estimators of the linear coefficient vector are provided:

* ``oracle``     OLS of the true unlabeled outcomes on X (simulation only)
* ``classical``  OLS on the labeled rows alone
* ``naive``      OLS of the unlabeled predictions on X
* ``postpi``     OLS of calibrated pseudo-outcomes, two-component variance
* ``proposed``   moment-corrected estimator with a sandwich variance in which
                 the labeled-sample contribution is scaled by ``N / n``
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .numerics import (
    DimensionMismatchError,
    FloatArray,
    RankDeficiencyError,
    RANK_TOL,
    as_matrix,
    as_vector,
    cross_moment_mean,
    gram_mean,
    ols_fit,
    outer_moment,
)

METHODS = ("oracle", "classical", "naive", "postpi", "proposed")


class RelationshipError(ValueError):
    """The calibration regression of outcomes on predictions is unidentified."""


class MissingOutcomeError(ValueError):
    """Oracle estimation requested without true unlabeled outcomes."""


@dataclass(frozen=True)
class Dataset:
    """Labeled rows ``(y, x, f)`` and unlabeled rows ``(x, f)``.

    ``x_*`` are full design matrices; use :meth:`from_covariates` to build
    them with a leading intercept column.
    """

    y_labeled: FloatArray
    x_labeled: FloatArray
    f_labeled: FloatArray
    x_unlabeled: FloatArray
    f_unlabeled: FloatArray
    y_unlabeled: FloatArray | None = None
    names: tuple[str, ...] = ()

    def __post_init__(self):
        xl = as_matrix(self.x_labeled, "x_labeled")
        xu = as_matrix(self.x_unlabeled, "x_unlabeled")
        yl = as_vector(self.y_labeled, "y_labeled")
        fl = as_vector(self.f_labeled, "f_labeled")
        fu = as_vector(self.f_unlabeled, "f_unlabeled")
        n, p = xl.shape
        N = xu.shape[0]
        if xu.shape[1] != p:
            raise DimensionMismatchError(f"labeled design has {p} columns, unlabeled has {xu.shape[1]}")
        if yl.shape[0] != n or fl.shape[0] != n:
            raise DimensionMismatchError("labeled y, f and x must have the same number of rows")
        if fu.shape[0] != N:
            raise DimensionMismatchError("unlabeled f and x must have the same number of rows")
        if n < p + 2:
            raise ValueError(f"need at least p+2={p + 2} labeled rows, got {n}")
        if N < p + 1:
            raise ValueError(f"need at least p+1={p + 1} unlabeled rows, got {N}")
        yu = self.y_unlabeled
        if yu is not None:
            yu = as_vector(yu, "y_unlabeled")
            if yu.shape[0] != N:
                raise DimensionMismatchError("unlabeled y and x must have the same number of rows")
        names = tuple(self.names) or tuple(f"x{j}" for j in range(p))
        if len(names) != p:
            raise DimensionMismatchError(f"{len(names)} names for {p} design columns")
        for attr, value in [
            ("x_labeled", xl), ("x_unlabeled", xu), ("y_labeled", yl),
            ("f_labeled", fl), ("f_unlabeled", fu), ("y_unlabeled", yu), ("names", names),
        ]:
            object.__setattr__(self, attr, value)

    @classmethod
    def from_covariates(
        cls,
        y_labeled,
        x_labeled,
        f_labeled,
        x_unlabeled,
        f_unlabeled,
        y_unlabeled=None,
        names=None,
        intercept: bool = True,
    ) -> Dataset:
        xl = as_matrix(x_labeled, "x_labeled")
        xu = as_matrix(x_unlabeled, "x_unlabeled")
        names = list(names) if names is not None else [f"x{j + 1}" for j in range(xl.shape[1])]
        if intercept:
            xl = np.column_stack([np.ones(xl.shape[0]), xl])
            xu = np.column_stack([np.ones(xu.shape[0]), xu])
            names = ["(Intercept)"] + names
        return cls(y_labeled, xl, f_labeled, xu, f_unlabeled, y_unlabeled, tuple(names))

    @property
    def n(self) -> int:
        return self.x_labeled.shape[0]

    @property
    def N(self) -> int:
        return self.x_unlabeled.shape[0]

    @property
    def p(self) -> int:
        return self.x_labeled.shape[1]


@dataclass(frozen=True)
class RelationshipFit:
    gamma0: float
    gamma1: float
    residuals: FloatArray
    sigma_r_sq: float


@dataclass(frozen=True)
class MomentSet:
    c_xf_u: FloatArray
    c_xeta_l: FloatArray
    m_xx_u: FloatArray
    s1_u: FloatArray
    s2_l: FloatArray


@dataclass(frozen=True)
class PostPiVarianceComponents:
    sigma_r_sq: float
    sigma_p_sq: float
    gamma1: float

    @property
    def total(self) -> float:
        return self.sigma_r_sq + self.gamma1**2 * self.sigma_p_sq


@dataclass(frozen=True)
class FitResult:
    method: str
    beta: FloatArray
    se: FloatArray
    ci_low: FloatArray
    ci_high: FloatArray
    p_value: FloatArray
    alpha: float
    n: int
    N: int
    covariance: FloatArray
    names: tuple[str, ...] = ()
    df: float | None = None
    extras: dict = field(default_factory=dict)

    def coefficient(self, name_or_index) -> dict:
        k = self.names.index(name_or_index) if isinstance(name_or_index, str) else int(name_or_index)
        return {
            "name": self.names[k] if self.names else str(k),
            "estimate": float(self.beta[k]),
            "se": float(self.se[k]),
            "ci_low": float(self.ci_low[k]),
            "ci_high": float(self.ci_high[k]),
            "p_value": float(self.p_value[k]),
        }


def critical_value(alpha: float, df: float | None = None) -> float:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if df is None:
        return float(stats.norm.ppf(1.0 - alpha / 2.0))
    return float(stats.t.ppf(1.0 - alpha / 2.0, df))


def wald_interval(beta_k: float, se_k: float, alpha: float, df: float | None = None):
    """Two-sided Wald interval and p-value for ``H0: coefficient = 0``.

    ``df=None`` uses the normal reference; otherwise Student-t with ``df``.
    """
    if se_k < 0:
        raise ValueError("standard error must be non-negative")
    crit = critical_value(alpha, df)
    half = crit * se_k
    if se_k == 0.0:
        p = 1.0 if beta_k == 0.0 else 0.0
    else:
        stat = abs(beta_k) / se_k
        p = float(2.0 * (stats.norm.sf(stat) if df is None else stats.t.sf(stat, df)))
    return beta_k - half, beta_k + half, min(1.0, max(0.0, p))


def contrast_inference(result: FitResult, covariance=None, c=None, alpha: float | None = None):
    """Wald interval for the linear contrast ``c^T beta``.

    Returns ``(estimate, low, high)``.
    """
    V = result.covariance if covariance is None else as_matrix(covariance, "covariance")
    c = as_vector(c, "c")
    p = result.beta.shape[0]
    if c.shape[0] != p or V.shape != (p, p):
        raise DimensionMismatchError(f"contrast of length {c.shape[0]} for {p} coefficients")
    if not np.any(c):
        raise ValueError("contrast vector must be nonzero")
    alpha = result.alpha if alpha is None else alpha
    est = float(c @ result.beta)
    half = critical_value(alpha, result.df) * np.sqrt(max(float(c @ V @ c), 0.0))
    return est, est - half, est + half


def _finish(method, beta, cov, dataset, alpha, df, extras=None) -> FitResult:
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    bounds = [wald_interval(float(b), float(s), alpha, df) for b, s in zip(beta, se)]
    lo, hi, pv = (np.array(col) for col in zip(*bounds))
    return FitResult(
        method=method,
        beta=np.asarray(beta, dtype=np.float64),
        se=se,
        ci_low=lo,
        ci_high=hi,
        p_value=pv,
        alpha=alpha,
        n=dataset.n,
        N=dataset.N,
        covariance=cov,
        names=dataset.names,
        df=df,
        extras=extras or {},
    )


def _ols_result(method, X, y, dataset, alpha, t_approx):
    m, p = X.shape
    if m <= p:
        raise RankDeficiencyError(f"{method}: need more than {p} rows, got {m}")
    fit = ols_fit(X, y, variance_denominator=m - p)
    cov = fit.gram_inverse * fit.residual_variance
    return _finish(method, fit.coefficients, cov, dataset, alpha, m - p if t_approx else None)


def fit_relationship(y_labeled, f_labeled) -> RelationshipFit:
    """Simple regression of observed outcomes on predictions (labeled rows)."""
    y = as_vector(y_labeled, "y_labeled")
    f = as_vector(f_labeled, "f_labeled")
    if y.shape != f.shape:
        raise DimensionMismatchError("y and f must have the same length")
    n = y.shape[0]
    if n < 3:
        raise RelationshipError(f"need at least 3 labeled rows, got {n}")
    if np.ptp(f) <= 1e-12 * max(1.0, np.abs(f).max()):
        raise RelationshipError("predictions are constant on the labeled rows; relationship slope unidentified")
    A = np.column_stack([np.ones(n), f])
    try:
        fit = ols_fit(A, y, variance_denominator=n - 2)
    except RankDeficiencyError as exc:
        raise RelationshipError(str(exc)) from exc
    g0, g1 = fit.coefficients
    return RelationshipFit(float(g0), float(g1), fit.residuals, fit.residual_variance)


def pseudo_outcomes(fit: RelationshipFit, f_unlabeled) -> FloatArray:
    return fit.gamma0 + fit.gamma1 * as_vector(f_unlabeled, "f_unlabeled")


def estimate_oracle(dataset: Dataset, alpha: float = 0.05, t_approx: bool = False) -> FitResult:
    if dataset.y_unlabeled is None:
        raise MissingOutcomeError("oracle estimation needs the true unlabeled outcomes")
    return _ols_result("oracle", dataset.x_unlabeled, dataset.y_unlabeled, dataset, alpha, t_approx)


def estimate_classical(dataset: Dataset, alpha: float = 0.05, t_approx: bool = False) -> FitResult:
    return _ols_result("classical", dataset.x_labeled, dataset.y_labeled, dataset, alpha, t_approx)


def estimate_naive(dataset: Dataset, alpha: float = 0.05, t_approx: bool = False) -> FitResult:
    return _ols_result("naive", dataset.x_unlabeled, dataset.f_unlabeled, dataset, alpha, t_approx)


def postpi_variance_components(dataset: Dataset, rel: RelationshipFit) -> PostPiVarianceComponents:
    N, p = dataset.x_unlabeled.shape
    naive = ols_fit(dataset.x_unlabeled, dataset.f_unlabeled, variance_denominator=N - p)
    return PostPiVarianceComponents(rel.sigma_r_sq, naive.residual_variance, rel.gamma1)


def estimate_postpi(
    dataset: Dataset,
    rel: RelationshipFit | None = None,
    alpha: float = 0.05,
    t_approx: bool = False,
) -> FitResult:
    """Regression of pseudo-outcomes on X with the two-component variance.

    The coefficient covariance is ``(X_U^T X_U)^{-1} (sigma_r^2 + gamma_1^2 sigma_p^2)``,
    where ``sigma_p^2`` is the residual variance of the predictions regressed
    on ``X_U``.
    """
    rel = rel or fit_relationship(dataset.y_labeled, dataset.f_labeled)
    N, p = dataset.x_unlabeled.shape
    ystar = pseudo_outcomes(rel, dataset.f_unlabeled)
    fit = ols_fit(dataset.x_unlabeled, ystar, variance_denominator=N - p)
    comps = postpi_variance_components(dataset, rel)
    cov = fit.gram_inverse * comps.total
    return _finish(
        "postpi", fit.coefficients, cov, dataset, alpha, dataset.n - 2 if t_approx else None,
        extras={"gamma0": rel.gamma0, "gamma1": rel.gamma1,
                "sigma_r_sq": comps.sigma_r_sq, "sigma_p_sq": comps.sigma_p_sq},
    )


def compute_moments(dataset: Dataset, rel: RelationshipFit) -> MomentSet:
    eta = as_vector(rel.residuals, "residuals")
    if eta.shape[0] != dataset.n:
        raise DimensionMismatchError(
            f"relationship residuals have length {eta.shape[0]}, labeled set has {dataset.n} rows"
        )
    xu, fu = dataset.x_unlabeled, dataset.f_unlabeled
    xl = dataset.x_labeled
    return MomentSet(
        c_xf_u=cross_moment_mean(xu, fu),
        c_xeta_l=cross_moment_mean(xl, eta),
        m_xx_u=gram_mean(xu),
        s1_u=outer_moment(xu * fu[:, None], centered=True),
        s2_l=outer_moment(xl * eta[:, None], centered=False),
    )


def _check_moment_matrix(M: FloatArray) -> None:
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= RANK_TOL * sv[0]:
        raise RankDeficiencyError("unlabeled second-moment matrix of X is singular")


def proposed_point_estimate(moments: MomentSet, gamma1: float) -> FloatArray:
    _check_moment_matrix(moments.m_xx_u)
    return np.linalg.solve(moments.m_xx_u, gamma1 * moments.c_xf_u + moments.c_xeta_l)


def proposed_covariance(moments: MomentSet, gamma1: float, n: int, N: int) -> FloatArray:
    _check_moment_matrix(moments.m_xx_u)
    M_inv = np.linalg.inv(moments.m_xx_u)
    meat = gamma1**2 * moments.s1_u + (N / n) * moments.s2_l
    return M_inv @ meat @ M_inv / N


def estimate_proposed(
    dataset: Dataset,
    rel: RelationshipFit | None = None,
    alpha: float = 0.05,
    t_approx: bool = False,
    moments: MomentSet | None = None,
) -> FitResult:
    """Moment-corrected estimate with its ``N/n``-scaled sandwich variance.

    Point estimate ``M^{-1} (gamma_1 C_xf + C_xeta)``; covariance
    ``M^{-1} (gamma_1^2 S_1 + (N/n) S_2) M^{-1} / N``. The intercept coordinate
    omits ``gamma_0`` exactly as the moment equations are written, so only
    slope coordinates are meaningful when ``X`` carries an intercept.
    """
    rel = rel or fit_relationship(dataset.y_labeled, dataset.f_labeled)
    moments = moments or compute_moments(dataset, rel)
    beta = proposed_point_estimate(moments, rel.gamma1)
    cov = proposed_covariance(moments, rel.gamma1, dataset.n, dataset.N)
    return _finish(
        "proposed", beta, cov, dataset, alpha, dataset.n - 2 if t_approx else None,
        extras={"gamma0": rel.gamma0, "gamma1": rel.gamma1},
    )


def estimate(dataset: Dataset, method: str, alpha: float = 0.05, t_approx: bool = False,
             rel: RelationshipFit | None = None) -> FitResult:
    if method == "oracle":
        return estimate_oracle(dataset, alpha, t_approx)
    if method == "classical":
        return estimate_classical(dataset, alpha, t_approx)
    if method == "naive":
        return estimate_naive(dataset, alpha, t_approx)
    if method == "postpi":
        return estimate_postpi(dataset, rel, alpha, t_approx)
    if method == "proposed":
        return estimate_proposed(dataset, rel, alpha, t_approx)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
