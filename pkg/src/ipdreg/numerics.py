"""Dense least squares, empirical moments and seeded normal sampling.

Everything here is a pure function of its arguments. Returned arrays are
marked read-only so fitted objects can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import solve_triangular

FloatArray = NDArray[np.float64]

# smallest singular value must exceed this fraction of the largest
RANK_TOL = 1e-10

_U64 = (1 << 64) - 1


class DimensionMismatchError(ValueError):
    """Array shapes are inconsistent with each other."""


class RankDeficiencyError(np.linalg.LinAlgError):
    """Design matrix (or moment matrix) is numerically rank deficient."""

    def __init__(self, message: str, column: int | None = None):
        super().__init__(message)
        self.column = column


def _frozen(a: ArrayLike) -> FloatArray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


def as_matrix(X: ArrayLike, name: str = "X") -> FloatArray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite entries")
    return X


def as_vector(v: ArrayLike, name: str = "v") -> FloatArray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatchError(f"{name} must be 1-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True)
class OlsFit:
    coefficients: FloatArray
    residuals: FloatArray
    residual_variance: float
    gram_inverse: FloatArray


def ols_fit(X: ArrayLike, y: ArrayLike, variance_denominator: int) -> OlsFit:
    """Least-squares fit of ``y`` on the columns of ``X`` via Householder QR.

    ``residual_variance`` is ``sum(residuals**2) / variance_denominator``; the
    caller picks the degrees-of-freedom convention. ``gram_inverse`` is
    ``(X^T X)^{-1}`` assembled from the triangular factor.
    """
    X = as_matrix(X)
    y = as_vector(y, "y")
    n, p = X.shape
    if y.shape[0] != n:
        raise DimensionMismatchError(f"X has {n} rows but y has length {y.shape[0]}")
    if n <= p:
        raise RankDeficiencyError(f"need more rows than columns, got n={n}, p={p}")
    if variance_denominator < 1:
        raise ValueError("variance_denominator must be positive")

    Q, R = np.linalg.qr(X, mode="reduced")
    _check_rank(R)

    coef = solve_triangular(R, Q.T @ y, lower=False)
    resid = y - X @ coef
    R_inv = solve_triangular(R, np.eye(p), lower=False)
    gram_inv = R_inv @ R_inv.T
    gram_inv = 0.5 * (gram_inv + gram_inv.T)
    return OlsFit(
        coefficients=_frozen(coef),
        residuals=_frozen(resid),
        residual_variance=float(resid @ resid) / variance_denominator,
        gram_inverse=_frozen(gram_inv),
    )


def _check_rank(R: FloatArray) -> None:
    sv = np.linalg.svd(R, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= RANK_TOL * sv[0]:
        diag = np.abs(np.diag(R))
        small = np.flatnonzero(diag <= RANK_TOL * max(diag.max(), 1e-300))
        col = int(small[0]) if small.size else int(np.argmin(diag))
        raise RankDeficiencyError(
            f"design matrix is rank deficient: column {col} is (nearly) a linear "
            f"combination of the preceding columns",
            column=col,
        )


def cross_moment_mean(X: ArrayLike, v: ArrayLike) -> FloatArray:
    """Row-averaged products ``(1/m) * sum_i X_i v_i``."""
    X = as_matrix(X)
    v = as_vector(v)
    if X.shape[0] != v.shape[0]:
        raise DimensionMismatchError(f"X has {X.shape[0]} rows but v has length {v.shape[0]}")
    if X.shape[0] < 1:
        raise DimensionMismatchError("need at least one row")
    return X.T @ v / X.shape[0]


def gram_mean(X: ArrayLike) -> FloatArray:
    """``X^T X / m``, symmetrised to kill round-off asymmetry."""
    X = as_matrix(X)
    if X.shape[0] < 1:
        raise DimensionMismatchError("need at least one row")
    G = X.T @ X / X.shape[0]
    return 0.5 * (G + G.T)


def outer_moment(products: ArrayLike, centered: bool) -> FloatArray:
    """Average outer product of the rows of ``products`` (m x p).

    With ``centered=True`` the sample mean row is subtracted first. Both
    variants divide by ``m``.
    """
    P = as_matrix(products, "products")
    m = P.shape[0]
    if m < (2 if centered else 1):
        raise ValueError(f"outer_moment needs at least {2 if centered else 1} vectors, got {m}")
    if centered:
        P = P - P.mean(axis=0)
    S = P.T @ P / m
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class RngSeed:
    """Key of a counter-based (Philox) stream.

    Equal ``(base_seed, stream_index)`` pairs give identical draws no matter
    which process or thread asks for them.
    """

    base_seed: int
    stream_index: int = 0

    def __post_init__(self):
        for name in ("base_seed", "stream_index"):
            value = getattr(self, name)
            if not 0 <= int(value) <= _U64:
                raise ValueError(f"{name} must fit in an unsigned 64-bit integer, got {value}")

    def generator(self) -> np.random.Generator:
        key = np.array([self.base_seed, self.stream_index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> RngSeed:
        """Independent sub-stream, e.g. one per tree or per data split."""
        mixed = np.random.SeedSequence([self.base_seed, self.stream_index]).generate_state(
            1, dtype=np.uint64
        )[0]
        return RngSeed(int(mixed), int(index))


def sample_standard_normal(seed: RngSeed, m: int) -> FloatArray:
    if m < 1:
        raise ValueError("m must be positive")
    return seed.generator().standard_normal(m)


def sample_bivariate_normal(seed: RngSeed, m: int, rho: float) -> FloatArray:
    """``m`` draws of a standard bivariate normal with correlation ``rho``."""
    if not abs(rho) < 1:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    if m < 1:
        raise ValueError("m must be positive")
    draws = seed.generator().standard_normal((m, 2))
    z1 = draws[:, 0]
    z2 = rho * z1 + np.sqrt(1.0 - rho * rho) * draws[:, 1]
    return np.column_stack([z1, z2])
