import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from hdinfer.lf import (LFOptions, build_context, ci_probability, debias_lf, lf, noise_levels,
                        normal_pvalue, variance_lf, wald_result, z_quantile)
from hdinfer.model import Dataset, InputError, ModelKind, augment_intercept

from conftest import sparse_linear


def test_z_quantile_and_pvalue_against_scipy():
    for a in (0.001, 0.01, 0.05, 0.1, 0.5, 0.9):
        assert z_quantile(a) == pytest.approx(stats.norm.ppf(1 - a / 2), abs=1e-10)
    for z in (-8.0, -2.5, -1.0, 0.0, 0.3, 1.96, 4.0):
        assert normal_pvalue(z) == pytest.approx(2 * stats.norm.sf(abs(z)), abs=1e-8)
    assert normal_pvalue(math.nan) == 1.0


@given(st.floats(-50, 50), st.floats(0, 100), st.floats(0.001, 0.5))
def test_wald_invariants(est, var, alpha):
    r = wald_result(0.0, est, var, alpha)
    assert r.ci_lower <= r.est_debias <= r.ci_upper
    assert abs((r.ci_upper - r.ci_lower) - 2 * z_quantile(alpha) * r.std_err) <= 1e-10 * max(1, abs(est))
    assert abs(0.5 * (r.ci_lower + r.ci_upper) - est) <= 1e-10 * max(1, abs(est))
    assert 0 <= r.p_value <= 1
    if var > 0:
        assert r.p_value == pytest.approx(2 * stats.norm.sf(abs(est / math.sqrt(var))), abs=1e-8)


def test_options_validation():
    with pytest.raises(InputError):
        LFOptions(alpha=1.0)
    with pytest.raises(InputError):
        LFOptions(rescale=0.9)
    with pytest.raises(InputError):
        LFOptions(prob_filter=0.5)


def test_debias_zero_residuals_and_zero_u():
    g = np.random.default_rng(0)
    X = g.standard_normal((30, 4))
    b = g.standard_normal(4)
    y = X @ b
    assert debias_lf(X, y, b, g.standard_normal(4), "linear") == 0.0
    yb = g.standard_normal(30)
    assert debias_lf(X, yb, b, np.zeros(4), "linear") == 0.0
    yl = 1 / (1 + np.exp(-X @ b))
    assert abs(debias_lf(X, yl, b, g.standard_normal(4), "logistic")) < 1e-12


def test_debias_ols_normal_equations():
    g = np.random.default_rng(1)
    X = g.standard_normal((50, 5))
    y = X @ np.arange(1.0, 6.0) + g.standard_normal(50)
    b = np.linalg.lstsq(X, y, rcond=None)[0]
    x = g.standard_normal(5)
    u = np.linalg.solve(X.T @ X / 50, x)
    assert abs(debias_lf(X, y, b, u, "linear")) < 1e-8


def test_debias_empty_mask():
    with pytest.raises(InputError):
        debias_lf(np.ones((3, 1)), np.ones(3), np.ones(1), np.ones(1), "linear",
                  mask=np.zeros(3, bool))


def test_noise_levels():
    g = np.random.default_rng(2)
    X = g.standard_normal((20, 3))
    b = g.standard_normal(3)
    np.testing.assert_array_equal(noise_levels(X, X @ b, b, "linear"), 0.0)
    np.testing.assert_array_equal(noise_levels(X, np.ones(20), np.zeros(3), "logistic"), 0.25)
    s = noise_levels(X, g.standard_normal(20), b, "linear")
    assert s.max() - s.min() == 0.0


def test_variance_examples():
    n = 7
    X = np.eye(n)
    u = np.eye(n)[0]
    assert variance_lf(u, X, np.zeros(n), "linear", np.ones(n)) == pytest.approx(1 / n ** 2, abs=1e-15)
    assert variance_lf(np.zeros(n), X, np.zeros(n), "linear", np.ones(n)) == 0.0
    g = np.random.default_rng(3)
    X2 = g.standard_normal((25, 4))
    u2 = g.standard_normal(4)
    v1 = variance_lf(u2, X2, np.zeros(4), "logistic", np.full(25, 0.25), rescale=1.0)
    v2 = variance_lf(u2, X2, np.zeros(4), "logistic", np.full(25, 0.25), rescale=2.0)
    assert v2 == pytest.approx(4 * v1, rel=1e-14)


def test_context_matches_loose_functions():
    g = np.random.default_rng(4)
    X = g.standard_normal((40, 5))
    eta = X[:, 0]
    y = (g.random(40) < 1 / (1 + np.exp(-eta))).astype(float)
    beta = np.array([0.1, 1.5, 0, 0, -0.5, 0])
    ctx = build_context(X, y, beta, "logistic", True, 0.05)
    Xd = augment_intercept(X)
    from hdinfer.model import prob_filter_mask
    mask = prob_filter_mask(Xd, beta, ModelKind.LOGISTIC, 0.05)
    assert ctx.n_kept == mask.sum() < 40
    u = g.standard_normal(6)
    assert ctx.correction(u) == pytest.approx(debias_lf(Xd, y, beta, u, "logistic", mask), rel=1e-12)
    noise = noise_levels(Xd, y, beta, "logistic")
    assert ctx.base_variance(u) == pytest.approx(
        variance_lf(u, Xd, beta, "logistic", noise, 1.0, mask), rel=1e-12)


def test_lf_identical_columns_and_determinism():
    X, y, _ = sparse_linear(80, 40, seed=5)
    L = np.zeros((40, 2))
    L[0, :] = 1.0
    data = Dataset(X, y)
    r = lf(data, L, "linear")
    assert r[0] == r[1]
    assert lf(data, L, "linear") == r


def test_lf_ols_limit():
    g = np.random.default_rng(6)
    X = g.standard_normal((500, 5))
    y = 0.5 + X @ np.array([1.0, -1, 0.5, 0, 0]) + g.standard_normal(500)
    x = np.array([1.0, 2.0, 0, 0, -1.0])
    res = lf(Dataset(X, y), x, "linear", LFOptions(lambda0=0.0))[0]
    ols = np.linalg.lstsq(augment_intercept(X), y, rcond=None)[0]
    assert res.est_debias == pytest.approx(x @ ols[1:], abs=1e-3)


def test_lf_beta_init_shape_checked():
    X, y, _ = sparse_linear(40, 10, seed=7)
    with pytest.raises(InputError, match="intercept first"):
        lf(Dataset(X, y), np.eye(10)[:, 0], "linear", beta_init=np.zeros(10))


def test_lf_zero_loading_column_tagged():
    X, y, _ = sparse_linear(40, 10, seed=7)
    L = np.zeros((10, 2))
    L[0, 0] = 1.0
    with pytest.raises(InputError, match="loading column 1"):
        lf(Dataset(X, y), L, "linear")


def test_lf_alpha_nesting():
    X, y, _ = sparse_linear(80, 40, seed=8)
    data = Dataset(X, y)
    a = lf(data, np.eye(40)[:, 0], "linear", LFOptions(alpha=0.05))[0]
    b = lf(data, np.eye(40)[:, 0], "linear", LFOptions(alpha=0.01))[0]
    assert b.ci_lower < a.ci_lower and a.ci_upper < b.ci_upper


def test_lf_logistic_runs():
    g = np.random.default_rng(9)
    X = g.standard_normal((150, 30))
    y = (g.random(150) < 1 / (1 + np.exp(-(X[:, 0] - X[:, 1])))).astype(float)
    for model in ("logistic", "logistic_alter"):
        r = lf(Dataset(X, y), np.eye(30)[:, :2], model)
        assert all(x.std_err > 0 and x.ci_lower <= x.est_debias <= x.ci_upper for x in r)
    with pytest.raises(InputError):
        lf(Dataset(X, X[:, 0]), np.eye(30)[:, 0], "logistic")


def test_ci_probability():
    r = wald_result(0.0, 0.0, 0.0, 0.05)
    assert ci_probability(r, "logistic") == (0.5, 0.5)
    r2 = wald_result(0.0, 2.0, (1 / z_quantile(0.05)) ** 2, 0.05)
    lo, hi = ci_probability(r2, "logistic")
    assert lo == pytest.approx(0.7311, abs=1e-4) and hi == pytest.approx(0.9526, abs=1e-4)
    with pytest.raises(InputError):
        ci_probability(r2, "linear")


@given(st.floats(-10, 10), st.floats(0, 4), st.floats(0, 4))
def test_ci_probability_monotone(est, v1, extra):
    a = ci_probability(wald_result(0, est, v1, 0.05), "logistic")
    b = ci_probability(wald_result(0, est, v1 + extra, 0.05), "logistic")
    assert b[0] <= a[0] and a[1] <= b[1]
    assert 0 <= a[0] <= a[1] <= 1
