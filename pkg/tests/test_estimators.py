import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ipdreg.estimators import (
    Dataset,
    MissingOutcomeError,
    RelationshipError,
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
    proposed_point_estimate,
    pseudo_outcomes,
    wald_interval,
)
from ipdreg.numerics import RankDeficiencyError, ols_fit

Z975 = 1.959963984540054


def make_dataset(seed, n=60, N=150, p_cov=2, corr=0.6):
    """Labeled/unlabeled data whose prediction error is correlated with X."""
    g = np.random.default_rng(seed)

    def draw(m):
        x = g.normal(size=(m, p_cov))
        y = 0.5 + x @ np.linspace(1, -1, p_cov) + g.normal(size=m)
        f = 0.8 * y - corr * x[:, -1] + 0.3 * g.normal(size=m)
        return x, y, f

    xl, yl, fl = draw(n)
    xu, yu, fu = draw(N)
    return Dataset.from_covariates(yl, xl, fl, xu, fu, y_unlabeled=yu)


# -- relationship model ----------------------------------------------------

def test_relationship_perfect_predictions():
    f = np.array([0.0, 1.0, 3.0, 4.5])
    rel = fit_relationship(f, f)
    assert rel.gamma0 == pytest.approx(0.0, abs=1e-12)
    assert rel.gamma1 == pytest.approx(1.0)
    np.testing.assert_allclose(rel.residuals, 0.0, atol=1e-12)
    assert rel.sigma_r_sq == pytest.approx(0.0, abs=1e-24)


def test_relationship_constant_outcome():
    rel = fit_relationship(np.full(5, 2.5), [1.0, -2.0, 3.0, 0.0, 7.0])
    assert rel.gamma0 == pytest.approx(2.5)
    assert rel.gamma1 == pytest.approx(0.0, abs=1e-12)


def test_relationship_matches_closed_form():
    g = np.random.default_rng(20)
    f = g.normal(size=20)
    y = 1.0 + 0.7 * f + g.normal(scale=0.5, size=20)
    s_yf = np.sum((y - y.mean()) * (f - f.mean()))
    s_ff = np.sum((f - f.mean()) ** 2)
    g1 = s_yf / s_ff
    g0 = y.mean() - g1 * f.mean()
    resid = y - g0 - g1 * f
    rel = fit_relationship(y, f)
    assert rel.gamma1 == pytest.approx(g1, abs=1e-10)
    assert rel.gamma0 == pytest.approx(g0, abs=1e-10)
    assert rel.sigma_r_sq == pytest.approx(resid @ resid / 18, rel=1e-10)
    assert abs(rel.residuals.mean()) <= 1e-10
    assert abs(rel.residuals @ f) <= 1e-8 * np.abs(f).sum()


def test_relationship_constant_predictions_rejected():
    with pytest.raises(RelationshipError):
        fit_relationship([1.0, 2.0, 3.0], [4.0, 4.0, 4.0])
    with pytest.raises(RelationshipError):
        fit_relationship([1.0, 2.0], [0.0, 1.0])


def test_pseudo_outcomes():
    f = np.array([0.0, 1.0, 2.0])
    ident = RelationshipFit(0.0, 1.0, np.zeros(3), 0.0)
    np.testing.assert_array_equal(pseudo_outcomes(ident, f), f)
    flat = RelationshipFit(4.0, 0.0, np.zeros(3), 0.0)
    np.testing.assert_array_equal(pseudo_outcomes(flat, f), [4.0, 4.0, 4.0])
    aff = RelationshipFit(1.0, 2.0, np.zeros(3), 0.0)
    np.testing.assert_array_equal(pseudo_outcomes(aff, f), [1.0, 3.0, 5.0])


# -- OLS-based benchmarks --------------------------------------------------

def _exact_linear_dataset():
    g = np.random.default_rng(3)
    xl, xu = g.normal(size=(10, 1)), g.normal(size=(30, 1))
    beta = np.array([0.5, -1.5])
    yl, yu = beta[0] + beta[1] * xl[:, 0], beta[0] + beta[1] * xu[:, 0]
    return Dataset.from_covariates(yl, xl, yl, xu, yu, y_unlabeled=yu), beta


def test_benchmarks_on_noiseless_data():
    ds, beta = _exact_linear_dataset()
    for fn in (estimate_oracle, estimate_classical, estimate_naive):
        res = fn(ds)
        np.testing.assert_allclose(res.beta, beta, atol=1e-12)
        np.testing.assert_allclose(res.se, 0.0, atol=1e-7)


def test_oracle_needs_truth():
    ds = make_dataset(0)
    with pytest.raises(MissingOutcomeError):
        estimate_oracle(replace(ds, y_unlabeled=None))


@pytest.mark.parametrize("method,x,y", [
    ("oracle", "x_unlabeled", "y_unlabeled"),
    ("classical", "x_labeled", "y_labeled"),
    ("naive", "x_unlabeled", "f_unlabeled"),
])
def test_benchmarks_delegate_to_ols(method, x, y):
    ds = make_dataset(1)
    X, Y = getattr(ds, x), getattr(ds, y)
    fit = ols_fit(X, Y, X.shape[0] - X.shape[1])
    res = estimate(ds, method)
    np.testing.assert_allclose(res.beta, fit.coefficients, atol=1e-12)
    np.testing.assert_allclose(res.se, np.sqrt(np.diag(fit.gram_inverse) * fit.residual_variance), rtol=1e-12)
    assert res.method == method and res.n == 60 and res.N == 150


def test_classical_needs_enough_rows():
    with pytest.raises(ValueError):
        Dataset.from_covariates(np.ones(3), np.ones((3, 2)), np.ones(3), np.ones((10, 2)), np.ones(10))


# -- PostPI ----------------------------------------------------------------

def test_postpi_exact_predictions_pass_through():
    ds, beta = _exact_linear_dataset()
    res = estimate_postpi(ds)
    np.testing.assert_allclose(res.beta, beta, atol=1e-12)


def test_postpi_matches_explicit_formula():
    ds = make_dataset(2)
    yl, fl, X, fu = ds.y_labeled, ds.f_labeled, ds.x_unlabeled, ds.f_unlabeled
    n, (N, p) = len(yl), X.shape
    A = np.column_stack([np.ones(n), fl])
    g = np.linalg.solve(A.T @ A, A.T @ yl)
    sr2 = np.sum((yl - A @ g) ** 2) / (n - 2)
    XtX_inv = np.linalg.inv(X.T @ X)
    ystar = g[0] + g[1] * fu
    beta = XtX_inv @ X.T @ ystar
    bf = XtX_inv @ X.T @ fu
    sp2 = np.sum((fu - X @ bf) ** 2) / (N - p)
    se = np.sqrt(np.diag(XtX_inv) * (sr2 + g[1] ** 2 * sp2))

    res = estimate_postpi(ds)
    np.testing.assert_allclose(res.beta, beta, rtol=1e-10)
    np.testing.assert_allclose(res.se, se, rtol=1e-10)
    assert res.extras["sigma_r_sq"] == pytest.approx(sr2, rel=1e-10)
    assert res.extras["sigma_p_sq"] == pytest.approx(sp2, rel=1e-10)


# -- moments and the proposed estimator ------------------------------------

def test_moments_with_zero_residuals():
    ds = make_dataset(4)
    rel = RelationshipFit(0.0, 1.0, np.zeros(ds.n), 0.0)
    mom = compute_moments(ds, rel)
    np.testing.assert_array_equal(mom.c_xeta_l, 0.0)
    np.testing.assert_array_equal(mom.s2_l, 0.0)


def test_moments_intercept_only():
    g = np.random.default_rng(5)
    fl, fu = g.normal(size=8), g.normal(size=12)
    ds = Dataset(fl + 1, np.ones((8, 1)), fl, np.ones((12, 1)), fu)
    mom = compute_moments(ds, fit_relationship(ds.y_labeled, ds.f_labeled))
    np.testing.assert_allclose(mom.m_xx_u, [[1.0]])
    np.testing.assert_allclose(mom.c_xf_u, [fu.mean()])


def test_moments_match_loop_oracles():
    ds = make_dataset(6, n=25, N=40, p_cov=2)
    rel = fit_relationship(ds.y_labeled, ds.f_labeled)
    mom = compute_moments(ds, rel)
    xl, xu, fu, eta = ds.x_labeled, ds.x_unlabeled, ds.f_unlabeled, rel.residuals
    n, N, p = ds.n, ds.N, ds.p
    c_xf = [sum(xu[i, a] * fu[i] for i in range(N)) / N for a in range(p)]
    c_xe = [sum(xl[j, a] * eta[j] for j in range(n)) / n for a in range(p)]
    m_xx = [[sum(xu[i, a] * xu[i, b] for i in range(N)) / N for b in range(p)] for a in range(p)]
    s1 = [[sum((xu[i, a] * fu[i] - c_xf[a]) * (xu[i, b] * fu[i] - c_xf[b]) for i in range(N)) / N
           for b in range(p)] for a in range(p)]
    s2 = [[sum(xl[j, a] * eta[j] * xl[j, b] * eta[j] for j in range(n)) / n
           for b in range(p)] for a in range(p)]
    for got, want in [(mom.c_xf_u, c_xf), (mom.c_xeta_l, c_xe), (mom.m_xx_u, m_xx),
                      (mom.s1_u, s1), (mom.s2_l, s2)]:
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_proposed_matches_explicit_formula():
    ds = make_dataset(7)
    rel = fit_relationship(ds.y_labeled, ds.f_labeled)
    mom = compute_moments(ds, rel)
    Minv = np.linalg.inv(mom.m_xx_u)
    beta = Minv @ (rel.gamma1 * mom.c_xf_u + mom.c_xeta_l)
    V = Minv @ (rel.gamma1 ** 2 * mom.s1_u + (ds.N / ds.n) * mom.s2_l) @ Minv / ds.N
    res = estimate_proposed(ds, rel)
    np.testing.assert_allclose(res.beta, beta, rtol=1e-10)
    np.testing.assert_allclose(res.se, np.sqrt(np.diag(V)), rtol=1e-10)


def test_proposed_corrects_the_slope_postpi_misses():
    ds = make_dataset(8, n=4000, N=8000)
    truth = np.array([0.5, 1.0, -1.0])
    prop = estimate_proposed(ds).beta
    post = estimate_postpi(ds).beta
    assert np.abs(prop[1:] - truth[1:]).max() < 0.1
    # population PostPI target: gamma_1 * (0.8, -1.4) with gamma_1 = 3.0 / 3.33
    np.testing.assert_allclose(post[1:], 3.0 / 3.33 * np.array([0.8, -1.4]), atol=0.05)


def test_proposed_singular_moment_matrix():
    g = np.random.default_rng(9)
    x = g.normal(size=30)
    xu = np.column_stack([np.ones(30), x, x])
    ds = Dataset(g.normal(size=10), np.column_stack([np.ones(10), g.normal(size=(10, 2))]),
                 g.normal(size=10), xu, g.normal(size=30))
    with pytest.raises(RankDeficiencyError):
        estimate_proposed(ds)


def test_reduction_to_postpi_fixed_example():
    ds = make_dataset(10)
    rel = fit_relationship(ds.y_labeled, ds.f_labeled)
    mom = compute_moments(ds, rel)
    reduced = proposed_point_estimate(replace(mom, c_xeta_l=np.zeros(ds.p)), rel.gamma1)
    post = estimate_postpi(ds, rel).beta
    np.testing.assert_allclose(reduced[1:], post[1:], rtol=0, atol=1e-10)
    # only the intercept differs, and by exactly gamma_0
    assert post[0] - reduced[0] == pytest.approx(rel.gamma0, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.floats(-2, 2))
def test_reduction_identity(seed, p_cov, corr):
    ds = make_dataset(seed, n=30, N=70, p_cov=p_cov, corr=corr)
    rel = fit_relationship(ds.y_labeled, ds.f_labeled)
    mom = compute_moments(ds, rel)
    reduced = proposed_point_estimate(replace(mom, c_xeta_l=np.zeros(ds.p)), rel.gamma1)
    X, fu = ds.x_unlabeled, ds.f_unlabeled
    direct = np.linalg.solve(X.T @ X, X.T @ (rel.gamma1 * fu))
    np.testing.assert_allclose(reduced[1:], direct[1:], rtol=0, atol=1e-10)
    np.testing.assert_allclose(reduced[1:], estimate_postpi(ds, rel).beta[1:], rtol=0, atol=1e-10)


# -- Wald inference --------------------------------------------------------

def test_wald_interval_arithmetic():
    lo, hi, p = wald_interval(1.0, 0.5, 0.05)
    assert lo == pytest.approx(1 - Z975 * 0.5, abs=1e-12)
    assert hi == pytest.approx(1 + Z975 * 0.5, abs=1e-12)
    assert (round(lo, 4), round(hi, 4)) == (0.0200, 1.9800)
    assert p == pytest.approx(2 * stats.norm.sf(2.0))


def test_wald_degenerate_se():
    assert wald_interval(1.5, 0.0, 0.05) == (1.5, 1.5, 0.0)
    assert wald_interval(0.0, 0.0, 0.05)[2] == 1.0


def test_wald_alpha_monotone_and_validated():
    w05 = np.subtract(*wald_interval(1.0, 0.5, 0.05)[1::-1])
    w32 = np.subtract(*wald_interval(1.0, 0.5, 0.32)[1::-1])
    assert w32 < w05
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            wald_interval(1.0, 0.5, bad)
    with pytest.raises(ValueError):
        wald_interval(1.0, -0.1, 0.05)


def test_t_approximation_widens_intervals():
    ds = make_dataset(11, n=12, N=40)
    z = estimate_proposed(ds)
    t = estimate_proposed(ds, t_approx=True)
    assert t.df == ds.n - 2
    np.testing.assert_array_less(z.ci_high - z.ci_low, t.ci_high - t.ci_low)
    np.testing.assert_array_less(z.p_value, t.p_value + 1e-300)


def test_contrast_inference():
    ds = make_dataset(12, p_cov=3)
    res = estimate_proposed(ds)
    for k in range(ds.p):
        e = np.eye(ds.p)[k]
        est, lo, hi = contrast_inference(res, res.covariance, e, 0.05)
        assert (est, lo, hi) == pytest.approx((res.beta[k], res.ci_low[k], res.ci_high[k]), rel=1e-12)

    # zero-padded contrast only sees the touched block
    c = np.array([0.0, 1.0, -2.0, 0.0])
    V = res.covariance.copy()
    V[0, :] = V[:, 0] = V[3, :] = V[:, 3] = 0.0
    V[0, 0] = V[3, 3] = 1e6
    assert contrast_inference(res, V, c, 0.05) == pytest.approx(contrast_inference(res, res.covariance, c, 0.05))

    c = np.random.default_rng(1).normal(size=ds.p)
    est, lo, hi = contrast_inference(res, res.covariance, c, 0.1)
    quad = sum(c[a] * res.covariance[a, b] * c[b] for a in range(ds.p) for b in range(ds.p))
    assert (hi - lo) / 2 == pytest.approx(stats.norm.ppf(0.95) * np.sqrt(quad), rel=1e-10)
    assert est == pytest.approx(c @ res.beta)


def test_contrast_errors():
    res = estimate_proposed(make_dataset(13))
    with pytest.raises(ValueError):
        contrast_inference(res, res.covariance, np.ones(5), 0.05)
    with pytest.raises(ValueError):
        contrast_inference(res, res.covariance, np.zeros(3), 0.05)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["oracle", "classical", "naive", "postpi", "proposed"]),
       st.floats(0.01, 0.5))
def test_fit_result_invariants(seed, method, alpha):
    res = estimate(make_dataset(seed), method, alpha=alpha)
    z = stats.norm.ppf(1 - alpha / 2)
    np.testing.assert_allclose(res.ci_high - res.ci_low, 2 * z * res.se, rtol=1e-12)
    assert np.all(res.ci_low <= res.beta) and np.all(res.beta <= res.ci_high)
    assert np.all((0 <= res.p_value) & (res.p_value <= 1))


def test_unknown_method():
    with pytest.raises(ValueError):
        estimate(make_dataset(0), "ppi")
