import warnings

import numpy as np
import pytest

from hdinfer.lf import LFOptions, z_quantile
from hdinfer.model import Dataset, InputError, link_derivative, link_value
from hdinfer.penalized import fit_initial
from hdinfer.qf import QFOptions
from hdinfer.two_sample import TwoSampleData, cate, distance, inner_product


def linear_sample(n, p, beta, seed, scale=1.0):
    g = np.random.default_rng(seed)
    X = scale * g.standard_normal((n, p))
    return Dataset(X, X @ beta + g.standard_normal(n))


def logistic_sample(n, p, beta, seed):
    g = np.random.default_rng(seed)
    X = g.standard_normal((n, p))
    y = (g.random(n) < 1 / (1 + np.exp(-X @ beta))).astype(float)
    return Dataset(X, y)


P = 30
B1 = np.zeros(P)
B1[:3] = [1.0, 0.5, 0.0]
B2 = np.zeros(P)
B2[:3] = [0.0, 0.5, 1.0]


@pytest.fixture(scope="module")
def linear_pair():
    s1, s2 = linear_sample(120, P, B1, 1), linear_sample(100, P, B2, 2)
    b1 = fit_initial(s1, "linear", seed=0).beta_hat
    b2 = fit_initial(s2, "linear", seed=1).beta_hat
    return s1, s2, b1, b2


def test_dimension_mismatch():
    with pytest.raises(InputError):
        TwoSampleData(linear_sample(20, 5, np.zeros(5), 0), linear_sample(20, 6, np.zeros(6), 0))


def test_cate_identical_samples_zero(linear_pair):
    s1, _, b1, _ = linear_pair
    r = cate(TwoSampleData(s1, s1), np.eye(P)[:, 0], "linear", beta_init1=b1, beta_init2=b1)[0]
    assert r.linear.est_debias == 0.0 and r.linear.est_plugin == 0.0


def test_cate_linear_variance_additive(linear_pair):
    s1, s2, b1, b2 = linear_pair
    r = cate(TwoSampleData(s1, s2), np.eye(P)[:, :2], "linear", beta_init1=b1, beta_init2=b2)
    for res in r:
        assert res.linear.variance == pytest.approx(res.var1 + res.var2, rel=1e-12)
        assert res.linear.est_debias == pytest.approx(res.est2 - res.est1, abs=1e-14)
        assert res.probability is None
        with pytest.raises(InputError):
            res.report(probability=True)


def test_cate_antisymmetry_binary():
    s1 = logistic_sample(150, P, B1, 3)
    s2 = logistic_sample(150, P, B2, 4)
    b1 = fit_initial(s1, "logistic", seed=0).beta_hat
    b2 = fit_initial(s2, "logistic", seed=1).beta_hat
    L = np.zeros(P)
    L[:2] = 1.0
    fwd = cate(TwoSampleData(s1, s2), L, "logistic", beta_init1=b1, beta_init2=b2)[0]
    bwd = cate(TwoSampleData(s2, s1), L, "logistic", beta_init1=b2, beta_init2=b1)[0]
    for a, b in ((fwd.linear, bwd.linear), (fwd.probability, bwd.probability)):
        assert a.est_debias == -b.est_debias
        assert a.variance == pytest.approx(b.variance, abs=1e-12)
    # delta method on the probability scale
    f = lambda z: float(link_value("logistic", z))
    g = lambda z: float(link_derivative("logistic", z))
    assert fwd.probability.est_debias == pytest.approx(f(fwd.est2) - f(fwd.est1), abs=1e-15)
    expect = g(fwd.est1) ** 2 * fwd.var1 + g(fwd.est2) ** 2 * fwd.var2
    assert fwd.probability.variance == pytest.approx(expect, rel=1e-12)
    assert fwd.report(True) is fwd.probability and fwd.report() is fwd.linear


def test_cate_sample_tag_on_bad_labels():
    s1 = logistic_sample(60, 5, np.zeros(5), 5)
    s2 = linear_sample(60, 5, np.zeros(5), 6)
    with pytest.raises(InputError, match="sample 2"):
        cate(TwoSampleData(s1, s2), np.eye(5)[:, 0], "logistic")


def test_inner_product_swap_symmetry(linear_pair):
    s1, s2, b1, b2 = linear_pair
    A = np.diag(np.linspace(0.5, 2.0, 5))
    opts = QFOptions(G=np.arange(5), A=A, split=False)
    fwd = inner_product(TwoSampleData(s1, s2), opts, "linear", b1, b2)
    bwd = inner_product(TwoSampleData(s2, s1), opts, "linear", b2, b1)
    assert fwd.est_raw == pytest.approx(bwd.est_raw, abs=1e-3)


def test_inner_product_variance_recomputable(linear_pair):
    s1, s2, b1, b2 = linear_pair
    for A in (None, np.eye(5)):
        opts = QFOptions(G=np.arange(5), A=A, split=False)
        res = inner_product(TwoSampleData(s1, s2), opts, "linear", b1, b2)
        e = res.extras
        assert res.est_raw == pytest.approx(res.rows[0].est_plugin + e["corr1"] + e["corr2"], abs=1e-12)
        for row in res.rows:
            var = e["v1"] + e["v2"] + res.sigma_variance + row.tau / 100
            assert row.std_err ** 2 == pytest.approx(var, rel=1e-12)
            # not truncated
            assert row.ci_lower == pytest.approx(row.est_debias - z_quantile(0.05) * row.std_err)
        assert (res.sigma_variance > 0) == (A is None)


def test_distance_variance_recomputable(linear_pair):
    s1, s2, b1, b2 = linear_pair
    res = distance(TwoSampleData(s1, s2), QFOptions(G=np.arange(5), split=False), "linear", b1, b2)
    e = res.extras
    np.testing.assert_array_equal(e["gamma_hat"], b2[1:] - b1[1:])
    assert res.est_raw == pytest.approx(res.rows[0].est_plugin - 2 * e["corr1"] + 2 * e["corr2"],
                                        abs=1e-12)
    for row in res.rows:
        var = 4 * e["v1"] + 4 * e["v2"] + res.sigma_variance + row.tau / 100
        assert row.std_err ** 2 == pytest.approx(var, rel=1e-12)
        assert row.est_debias >= 0 and row.ci_lower >= 0


def test_distance_same_sample_is_zero(linear_pair):
    s1, _, b1, _ = linear_pair
    res = distance(TwoSampleData(s1, s1), QFOptions(G=np.arange(5), split=False), "linear", b1, b1)
    assert np.all(res.extras["gamma_hat"] == 0)
    assert res.extras["corr1"] == 0 and res.extras["corr2"] == 0
    for row in res.rows:
        assert row.est_plugin == 0 and row.est_debias == 0 and row.ci_lower == 0


def test_gram_mismatch_warning():
    s1 = linear_sample(80, 10, np.zeros(10), 7)
    s2 = linear_sample(80, 10, np.zeros(10), 8, scale=2.0)
    beta = np.zeros(11)
    beta[1] = 0.5
    with pytest.warns(RuntimeWarning, match="Gram"):
        res = inner_product(TwoSampleData(s1, s2), QFOptions(G=[0, 1], split=False), "linear",
                            beta, beta)
    assert res.extras["gram_mismatch"]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = inner_product(TwoSampleData(s1, s2), QFOptions(G=[0, 1], A=np.eye(2), split=False),
                            "linear", beta, beta)
    assert not res.extras["gram_mismatch"]


def test_split_requires_rows():
    s = linear_sample(3, 4, np.zeros(4), 9)
    with pytest.raises(InputError, match="sample 1"):
        distance(TwoSampleData(s, linear_sample(20, 4, np.zeros(4), 10)), QFOptions(G=[0]),
                 "linear")
