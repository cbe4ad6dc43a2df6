import json
import warnings

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, strategies as st

from esdp.calibration import (
    FeasibleSetPCA,
    FitError,
    calibrate,
    fit_infection_model,
    fit_pca_bounds,
    fit_relative_increment,
    ols_fit,
    shapiro_wilk,
)
from esdp.data import align
from esdp.epidemic import LogOddsDynamicsParams
from esdp.reference import US_JUN21_DYNAMICS, US_JUN21_INFECTION
from esdp.synthetic import log_odds_panel, synthetic_panel


def normal_equations(X, y, intercept=True):
    """Brute-force oracle: solve X'X b = X'y directly."""
    if intercept:
        X = np.column_stack([np.ones(len(y)), X])
    return np.linalg.solve(X.T @ X, X.T @ y)


# ---- ols_fit

def test_ols_collinear_points_exact_line():
    fit = ols_fit([[0.0], [1.0], [2.0], [3.0]], [1.0, 3.0, 5.0, 7.0])
    assert fit.coefficients == pytest.approx([1.0, 2.0], abs=1e-12)
    assert np.abs(fit.residuals).max() < 1e-12
    assert fit.r_squared == 1.0


def test_ols_too_few_points_rejected():
    with pytest.raises(FitError):
        ols_fit([[0.0], [1.0], [2.0]], [1.0, 3.0, 5.0])


def test_ols_constant_response(gen):
    X = gen.standard_normal((30, 3))
    fit = ols_fit(X, np.full(30, 4.5))
    assert fit.coefficients[0] == pytest.approx(4.5, abs=1e-12)
    assert np.abs(fit.coefficients[1:]).max() < 1e-12


@given(st.integers(0, 2**31 - 1))
def test_ols_matches_normal_equations(seed):
    gen = np.random.default_rng(seed)
    X = gen.standard_normal((50, 6))
    beta = gen.normal(size=7)
    y = beta[0] + X @ beta[1:] + 0.1 * gen.standard_normal(50)
    fit = ols_fit(X, y)
    oracle = normal_equations(X, y)
    assert np.abs(fit.coefficients - oracle).max() <= 1e-8 * np.abs(oracle).max()


def test_ols_standard_errors_match_textbook_formula(gen):
    X = gen.standard_normal((40, 2))
    y = 1 + X @ [2.0, -1.0] + gen.standard_normal(40)
    fit = ols_fit(X, y)
    Xi = np.column_stack([np.ones(40), X])
    s2 = fit.residuals @ fit.residuals / (40 - 3)
    se = np.sqrt(s2 * np.diag(np.linalg.inv(Xi.T @ Xi)))
    assert fit.standard_errors == pytest.approx(se, rel=1e-10)


def test_ols_rank_deficiency(gen):
    x = gen.standard_normal(20)
    with pytest.raises(FitError, match="rank"):
        ols_fit(np.column_stack([x, 2 * x]), gen.standard_normal(20))


@given(st.integers(0, 2**31 - 1))
def test_r_squared_nested_models(seed):
    gen = np.random.default_rng(seed)
    X = gen.standard_normal((40, 4))
    y = X @ gen.normal(size=4) + gen.standard_normal(40)
    small = ols_fit(X[:, :3], y).r_squared
    big = ols_fit(X, y).r_squared
    assert big >= small - 1e-12


# ---- Shapiro-Wilk

@pytest.mark.parametrize("draw, small_p", [("normal", False), ("exponential", True)])
def test_shapiro_wilk_against_reference(draw, small_p):
    x = getattr(np.random.default_rng(2024), draw)(size=30)
    ours = shapiro_wilk(x)
    ref = scipy.stats.shapiro(x)
    assert ours.w_statistic == pytest.approx(ref.statistic, abs=1e-3)
    assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-3)
    assert (ours.p_value < 0.01) == small_p


@pytest.mark.parametrize("n", [3, 4, 5, 7, 11, 12, 50, 400, 5000])
def test_shapiro_wilk_sizes(n):
    x = np.random.default_rng(n).standard_normal(n)
    ours, ref = shapiro_wilk(x), scipy.stats.shapiro(x)
    assert ours.w_statistic == pytest.approx(ref.statistic, abs=1e-6)
    assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-4)


@given(st.integers(0, 2**31 - 1), st.floats(-100, 100), st.floats(0.01, 100))
def test_shapiro_wilk_affine_invariance(seed, shift, scale):
    x = np.random.default_rng(seed).standard_normal(40)
    a, b = shapiro_wilk(x), shapiro_wilk(shift + scale * x)
    assert abs(a.p_value - b.p_value) <= 1e-10


def test_shapiro_wilk_errors():
    with pytest.raises(FitError):
        shapiro_wilk(np.ones(10))
    with pytest.raises(FitError):
        shapiro_wilk([1.0, 2.0])


# ---- infection model

def test_infection_model_recovery():
    ds, lo = log_odds_panel(500, seed=11)
    model, sigma, fit, _ = fit_infection_model(ds, lo)
    truth = np.array([US_JUN21_INFECTION.c0, *US_JUN21_INFECTION.c])
    assert np.all(np.abs(fit.coefficients - truth) <= 3 * fit.standard_errors)
    se_sigma = US_JUN21_DYNAMICS.sigma_beta / np.sqrt(2 * (fit.n_observations - 7))
    assert abs(sigma - US_JUN21_DYNAMICS.sigma_beta) <= 3 * se_sigma


def test_infection_model_noiseless_recovery():
    quiet = LogOddsDynamicsParams(0.0176, 0.1919, 0.0061, 0.0451, 0.0)
    ds, lo = log_odds_panel(200, seed=2, dynamics=quiet)
    model, sigma, fit, _ = fit_infection_model(ds, lo)
    truth = np.array([US_JUN21_INFECTION.c0, *US_JUN21_INFECTION.c])
    assert np.abs(fit.coefficients - truth).max() <= 1e-8
    assert sigma < 1e-10


def test_infection_model_constant_mobility_is_rank_deficient():
    ds, lo = log_odds_panel(60, seed=1, mobility_spread=0.0)
    with pytest.raises(FitError, match="rank"):
        fit_infection_model(ds, lo)


def test_infection_model_needs_twenty_pairs():
    ds, lo = log_odds_panel(15, seed=1)
    with pytest.raises(FitError, match="20"):
        fit_infection_model(ds, lo)


def test_infection_model_diagnostic_forms():
    ds, lo = log_odds_panel(120, seed=3)
    for form in ("difference", "relative"):
        _, _, fit, _ = fit_infection_model(ds, lo, form=form, truncate=20)
        assert fit.n_observations == 120 - 20
    with pytest.raises(ValueError):
        fit_infection_model(ds, lo, form="log")


# ---- relative increments

def test_relative_increment_geometric():
    mu, sigma = fit_relative_increment(-2.0 * 1.01 ** np.arange(30))
    assert mu == pytest.approx(0.01, abs=1e-12)
    assert sigma == pytest.approx(0.0, abs=1e-12)


def test_relative_increment_recovery():
    _, lo = log_odds_panel(1000, seed=8)
    mu, sigma = fit_relative_increment(lo.delta)
    n = 1000
    assert abs(mu - 0.0061) <= 3 * 0.0451 / np.sqrt(n)
    assert abs(sigma - 0.0451) <= 3 * 0.0451 / np.sqrt(2 * (n - 1))


def test_relative_increment_degenerate():
    with pytest.warns(RuntimeWarning):
        mu, sigma = fit_relative_increment([-2.0, -2.1])
    assert sigma == 0.0 and mu == pytest.approx(0.05)
    with pytest.raises(FitError):
        fit_relative_increment([-2.0, 0.0, -1.0])


# ---- PCA box

def test_pca_first_direction_on_largest_variance_axis(gen):
    x = np.zeros((500, 6))
    x[:, 1] = 2.0 * gen.standard_normal(500)
    x[:, 4] = gen.standard_normal(500)
    fs = fit_pca_bounds(x)
    assert abs(fs.a_matrix[0, 1]) == pytest.approx(1.0, abs=1e-2)
    assert fs.a_matrix[0, 1] > 0   # sign convention


@given(st.integers(0, 2**31 - 1))
def test_pca_orthonormal_and_contains_history(seed):
    x = np.random.default_rng(seed).uniform(-0.6, 0.6, (30, 6))
    fs = fit_pca_bounds(x)
    assert np.abs(fs.a_matrix @ fs.a_matrix.T - np.eye(6)).max() <= 1e-10
    sc = fs.scores(x)
    assert np.all(sc >= fs.lower) and np.all(sc <= fs.upper)
    assert fs.max_violation(x) == 0.0


def test_pca_errors():
    with pytest.raises(FitError, match="zero covariance"):
        fit_pca_bounds(np.tile(np.arange(6) / 10, (10, 1)))
    with pytest.raises(FitError, match="7"):
        fit_pca_bounds(np.zeros((5, 6)))


def test_pca_round_trip():
    fs = fit_pca_bounds(np.random.default_rng(0).uniform(-0.5, 0.5, (20, 6)))
    back = FeasibleSetPCA.from_dict(json.loads(json.dumps(fs.to_dict())))
    assert np.array_equal(back.a_matrix, fs.a_matrix)


# ---- full pipeline

def test_calibrate_report_completeness():
    p = synthetic_panel(n_days=80, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cal = calibrate(align(p.mobility, p.epidemic, p.index))
    rep = json.loads(cal.report_json())
    inf = rep["infection"]
    assert set(inf["coefficients"]) == {"intercept", "rr", "gp", "pa", "ts", "wp", "re"}
    assert 0 <= inf["r_squared"] <= 1 and 0 <= inf["shapiro_wilk_p"] <= 1
    assert set(rep["dynamics"]) == {"mu_gamma", "sigma_gamma", "mu_delta", "sigma_delta",
                                    "sigma_beta"}
    assert set(rep["economic"]["coefficients"]) >= {"i", "r", "d"}
    assert set(rep["normality"]) >= {"beta", "gamma", "delta"}


def test_calibrate_without_index():
    p = synthetic_panel(n_days=80, seed=1)
    cal = calibrate(align(p.mobility, p.epidemic))
    assert cal.economic is None and cal.report()["economic"] is None
