"""Simulation settings, the seeded Monte Carlo engine and table rendering.

Settings 1 and 2 draw four independent standard normal covariates and an
outcome with a linear effect of ``Z1`` plus nonlinear terms in the others;
an additive spline model trained on all four covariates supplies the
predictions and the inferential design is ``(1, Z1)``.

Setting 3 draws ``(Z1, Z2)`` with correlation ``rho`` and a linear outcome.
The forest only sees ``Z1`` while the design is ``(1, Z1, Z2)``, so the
prediction error is correlated with ``Z2``.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .estimators import METHODS, Dataset, estimate, fit_relationship
from .numerics import FloatArray, RngSeed, sample_bivariate_normal, sample_standard_normal
from .predictors import (
    ExternalModel,
    RandomForestConfig,
    SplineAdditiveConfig,
    train_random_forest,
    train_spline_additive,
)

TARGET_INDEX = 1  # slope on Z1, right after the intercept
PREDICTOR_MODES = ("trained", "conditional_mean", "truth")
_NEEDS_F = {"naive", "postpi", "proposed"}
# round-off allowance when a degenerate interval collapses onto the true value
_COVERAGE_SLACK = 1e-12


@dataclass(frozen=True)
class SimSetting:
    setting_id: int
    n_t: int
    n: int
    N: int
    beta1: float
    noise_sd: float
    rho: float = 0.5
    predictor: str = "trained"
    prediction_noise_sd: float = 0.0
    interior_knots: int = 10
    n_trees: int = 100
    min_leaf: int = 5
    mtry: int | None = None

    def __post_init__(self):
        if self.setting_id not in (1, 2, 3):
            raise ValueError(f"setting_id must be 1, 2 or 3, got {self.setting_id}")
        if min(self.n_t, self.n, self.N) < 1:
            raise ValueError("sample sizes must be positive")
        if self.noise_sd < 0 or self.prediction_noise_sd < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if not abs(self.rho) < 1:
            raise ValueError("|rho| must be < 1")
        if self.predictor not in PREDICTOR_MODES:
            raise ValueError(f"predictor must be one of {PREDICTOR_MODES}")

    @classmethod
    def default(cls, setting_id: int, beta1: float = 0.0, **overrides) -> SimSetting:
        if setting_id not in (1, 2, 3):
            raise ValueError(f"setting_id must be 1, 2 or 3, got {setting_id}")
        sizes = {1: (500, 500, 500), 2: (500, 500, 1000), 3: (500, 500, 1000)}[setting_id]
        noise = 1.0 if setting_id == 3 else 2.0
        base = dict(setting_id=setting_id, n_t=sizes[0], n=sizes[1], N=sizes[2],
                    beta1=float(beta1), noise_sd=noise)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Sample:
    z: FloatArray
    y: FloatArray
    eps: FloatArray


@dataclass(frozen=True)
class SimDraw:
    train: Sample
    labeled: Sample
    unlabeled: Sample


def outcome_setting12(z: FloatArray, beta1: float, eps: FloatArray | float = 0.0) -> FloatArray:
    z = np.atleast_2d(z)
    return beta1 * z[:, 0] + 0.5 * z[:, 1] + 3.0 * z[:, 2] ** 3 + 4.0 * z[:, 3] ** 2 + eps


def outcome_setting3(z: FloatArray, beta1: float, eps: FloatArray | float = 0.0) -> FloatArray:
    z = np.atleast_2d(z)
    return beta1 * z[:, 0] + z[:, 1] + eps


def _draw(seed: RngSeed, counts, covariates, outcome, beta1, noise_sd) -> SimDraw:
    splits = []
    for s, m in enumerate(counts):
        if m < 1:
            raise ValueError("counts must be positive")
        z = covariates(seed.child(2 * s), m)
        eps = noise_sd * sample_standard_normal(seed.child(2 * s + 1), m)
        splits.append(Sample(z, outcome(z, beta1, eps), eps))
    return SimDraw(*splits)


def generate_setting12(seed: RngSeed, counts, beta1: float, noise_sd: float = 2.0) -> SimDraw:
    """Train/labeled/unlabeled draws for settings 1 and 2 (4 iid N(0,1) covariates)."""

    def covariates(s, m):
        return sample_standard_normal(s, 4 * m).reshape(m, 4)

    return _draw(seed, counts, covariates, outcome_setting12, beta1, noise_sd)


def generate_setting3(seed: RngSeed, counts, beta1: float, noise_sd: float = 1.0,
                      rho: float = 0.5) -> SimDraw:
    """Train/labeled/unlabeled draws for setting 3 (correlated bivariate covariates)."""

    def covariates(s, m):
        return sample_bivariate_normal(s, m, rho)

    return _draw(seed, counts, covariates, outcome_setting3, beta1, noise_sd)


def generate(setting: SimSetting, seed: RngSeed) -> SimDraw:
    counts = (setting.n_t, setting.n, setting.N)
    if setting.setting_id == 3:
        return generate_setting3(seed, counts, setting.beta1, setting.noise_sd, setting.rho)
    return generate_setting12(seed, counts, setting.beta1, setting.noise_sd)


def predictor_features(setting: SimSetting, z: FloatArray) -> FloatArray:
    return z[:, :1] if setting.setting_id == 3 else z


def design_covariates(setting: SimSetting, z: FloatArray) -> tuple[FloatArray, list[str]]:
    if setting.setting_id == 3:
        return z[:, :2], ["Z1", "Z2"]
    return z[:, :1], ["Z1"]


def conditional_mean(setting: SimSetting, z: FloatArray) -> FloatArray:
    """E[Y | predictor features] under the data-generating model."""
    if setting.setting_id == 3:
        return (setting.beta1 + setting.rho) * z[:, 0]
    return outcome_setting12(z, setting.beta1)


def structural_mean(setting: SimSetting, z: FloatArray) -> FloatArray:
    """E[Y | all covariates]."""
    if setting.setting_id == 3:
        return outcome_setting3(z, setting.beta1)
    return outcome_setting12(z, setting.beta1)


def build_predictor(setting: SimSetting, draw: SimDraw, seed: RngSeed):
    """Return ``f`` as a function of the full covariate matrix ``z``."""
    if setting.predictor == "trained":
        feats = predictor_features(setting, draw.train.z)
        if setting.setting_id == 3:
            cfg = RandomForestConfig(n_trees=setting.n_trees, min_leaf=setting.min_leaf,
                                     mtry=setting.mtry, seed=seed)
            model = train_random_forest(feats, draw.train.y, cfg)
        else:
            model = train_spline_additive(feats, draw.train.y,
                                          SplineAdditiveConfig(setting.interior_knots))
        return lambda z: model.predict(predictor_features(setting, z))
    mean = conditional_mean if setting.predictor == "conditional_mean" else structural_mean
    return ExternalModel(lambda z: mean(setting, z), draw.train.z.shape[1]).predict


@dataclass(frozen=True)
class MethodOutcome:
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float


@dataclass(frozen=True)
class ReplicateRecord:
    rep_index: int
    base_seed: int
    stream_index: int
    outcomes: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)


def build_dataset(setting: SimSetting, draw: SimDraw, f_labeled, f_unlabeled) -> Dataset:
    xl, names = design_covariates(setting, draw.labeled.z)
    xu, _ = design_covariates(setting, draw.unlabeled.z)
    return Dataset.from_covariates(
        draw.labeled.y, xl, f_labeled, xu, f_unlabeled,
        y_unlabeled=draw.unlabeled.y, names=names,
    )


def replicate_dataset(setting: SimSetting, rep_index: int, base_seed: int,
                      with_predictions: bool = True) -> Dataset:
    """The labeled/unlabeled dataset seen by the estimators in one replicate."""
    seed = RngSeed(int(base_seed), int(rep_index))
    draw = generate(setting, seed.child(0))
    if with_predictions:
        f = build_predictor(setting, draw, seed.child(1))
        f_l, f_u = f(draw.labeled.z), f(draw.unlabeled.z)
        if setting.predictor != "trained" and setting.prediction_noise_sd > 0:
            noise = sample_standard_normal(seed.child(2), setting.n + setting.N)
            f_l = f_l + setting.prediction_noise_sd * noise[: setting.n]
            f_u = f_u + setting.prediction_noise_sd * noise[setting.n:]
    else:
        # predictions unused; placeholders keep the dataset well formed
        f_l, f_u = draw.labeled.y, np.zeros(setting.N)
    return build_dataset(setting, draw, f_l, f_u)


def run_replicate(setting: SimSetting, rep_index: int, base_seed: int, methods=METHODS,
                  alpha: float = 0.05, t_approx: bool = False) -> ReplicateRecord:
    """One replicate: draw splits, train the predictor, run each method.

    Estimator failures are recorded per method instead of aborting the
    replicate.
    """
    methods = _check_methods(methods)
    seed = RngSeed(int(base_seed), int(rep_index))
    outcomes, errors = {}, {}
    try:
        dataset = replicate_dataset(setting, rep_index, base_seed,
                                    with_predictions=bool(_NEEDS_F & set(methods)))
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        msg = f"{type(exc).__name__}: {exc}"
        return ReplicateRecord(rep_index, seed.base_seed, seed.stream_index, {}, {m: msg for m in methods})
    rel = None
    for method in methods:
        try:
            if method in ("postpi", "proposed") and rel is None:
                rel = fit_relationship(dataset.y_labeled, dataset.f_labeled)
            res = estimate(dataset, method, alpha=alpha, t_approx=t_approx, rel=rel)
            c = res.coefficient(TARGET_INDEX)
            outcomes[method] = MethodOutcome(c["estimate"], c["se"], c["ci_low"], c["ci_high"], c["p_value"])
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            errors[method] = f"{type(exc).__name__}: {exc}"
    return ReplicateRecord(rep_index, seed.base_seed, seed.stream_index, outcomes, errors)


def _check_methods(methods) -> tuple[str, ...]:
    methods = tuple(methods)
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ValueError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    return tuple(m for m in METHODS if m in methods)


@dataclass(frozen=True)
class MetricsRow:
    setting_id: int
    n_t: int
    n: int
    N: int
    beta1: float
    method: str
    bias: float
    mse: float
    mean_ci_width: float
    coverage: float
    rejection_rate: float
    n_reps: int
    n_failed: int = 0


@dataclass(frozen=True)
class MonteCarloResult:
    setting: SimSetting
    base_seed: int
    alpha: float
    rows: list
    records: list

    @property
    def n_failed(self) -> int:
        return sum(r.n_failed for r in self.rows)

    def row(self, method: str) -> MetricsRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)


def aggregate(records, setting: SimSetting, methods=METHODS, alpha: float = 0.05) -> list[MetricsRow]:
    """Fold replicate records (in rep_index order) into one row per method."""
    methods = _check_methods(methods)
    records = sorted(records, key=lambda r: r.rep_index)
    rows = []
    for method in methods:
        outs = [r.outcomes[method] for r in records if method in r.outcomes]
        failed = sum(1 for r in records if method not in r.outcomes)
        if outs:
            est = np.array([o.estimate for o in outs])
            err = est - setting.beta1
            lo = np.array([o.ci_low for o in outs])
            hi = np.array([o.ci_high for o in outs])
            pv = np.array([o.p_value for o in outs])
            tol = _COVERAGE_SLACK * max(1.0, abs(setting.beta1))
            stats = dict(
                bias=float(err.mean()),
                mse=float((err**2).mean()),
                mean_ci_width=float((hi - lo).mean()),
                coverage=float(((lo - tol <= setting.beta1) & (setting.beta1 <= hi + tol)).mean()),
                rejection_rate=float((pv < alpha).mean()),
            )
        else:
            stats = dict(bias=math.nan, mse=math.nan, mean_ci_width=math.nan,
                         coverage=math.nan, rejection_rate=math.nan)
        rows.append(MetricsRow(setting.setting_id, setting.n_t, setting.n, setting.N,
                               setting.beta1, method, n_reps=len(outs), n_failed=failed, **stats))
    return rows


def _replicate_task(args):
    return run_replicate(*args)


def run_monte_carlo(setting: SimSetting, n_reps: int, base_seed: int, methods=METHODS,
                    alpha: float = 0.05, workers: int = 1, t_approx: bool = False) -> MonteCarloResult:
    """Run ``n_reps`` independent replicates; replicate ``r`` uses stream ``r``.

    The result is the same for any ``workers`` count.
    """
    if n_reps < 2:
        raise ValueError("n_reps must be >= 2")
    methods = _check_methods(methods)
    tasks = [(setting, r, base_seed, methods, alpha, t_approx) for r in range(n_reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_replicate_task, tasks, chunksize=max(1, n_reps // (4 * workers))))
    else:
        records = [_replicate_task(t) for t in tasks]
    rows = aggregate(records, setting, methods, alpha)
    return MonteCarloResult(setting, int(base_seed), alpha, rows, records)


_COLS = ("Bias", "MSE", "CI W", "Cov")
_BLOCK = re.compile(r"^Setting (\d+) \| beta1 = (\S+)$")


def _block_key(row: MetricsRow):
    return (row.setting_id, row.n_t, row.n, row.N, row.beta1)


def render_table(rows) -> str:
    """Plain-text table, one block per (setting, beta1), three decimals."""
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to render")
    order = {m: i for i, m in enumerate(METHODS)}
    blocks: dict = {}
    for r in rows:
        blocks.setdefault(_block_key(r), []).append(r)
    lines = []
    for key in sorted(blocks):
        setting_id, _, _, _, beta1 = key
        last = "T1 Err" if beta1 == 0 else "Power"
        if lines:
            lines.append("")
        lines.append(f"Setting {setting_id} | beta1 = {beta1:g}")
        lines.append(f"{'n_t':>5} {'n':>5} {'N':>6}  {'Method':<10}"
                     + "".join(f"{c:>8}" for c in _COLS) + f"{last:>8}")
        for r in sorted(blocks[key], key=lambda r: order.get(r.method, len(order))):
            vals = (r.bias, r.mse, r.mean_ci_width, r.coverage, r.rejection_rate)
            lines.append(f"{r.n_t:>5} {r.n:>5} {r.N:>6}  {r.method:<10}"
                         + "".join(f"{v:>8.3f}" for v in vals))
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> list[MetricsRow]:
    """Inverse of :func:`render_table` (values come back rounded to 3 places)."""
    rows, current = [], None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("n_t"):
            continue
        m = _BLOCK.match(line.strip())
        if m:
            current = (int(m.group(1)), float(m.group(2)))
            continue
        parts = line.split()
        if current is None or len(parts) != 9:
            raise ValueError(f"line {lineno}: cannot parse table row {line!r}")
        n_t, n, N = (int(x) for x in parts[:3])
        bias, mse, width, cov, rej = (float(x) for x in parts[4:])
        rows.append(MetricsRow(current[0], n_t, n, N, current[1], parts[3],
                               bias, mse, width, cov, rej, n_reps=0))
    return rows


def with_beta(setting: SimSetting, beta1: float) -> SimSetting:
    return replace(setting, beta1=float(beta1))
