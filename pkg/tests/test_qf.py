import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdinfer.lf import build_context
from hdinfer.model import Dataset, InputError
from hdinfer.projection import auto_tune
from hdinfer.qf import QFOptions, qf, qf_variance, quadratic_rows, sigma_term

from conftest import sparse_linear


def test_variance_examples():
    assert qf_variance(0.0, 0.5, 80) == 0.5 / 80
    v1, v25 = qf_variance(0.3, 1.0, 80), qf_variance(0.3, 0.25, 80)
    assert v1 - v25 == pytest.approx(0.75 / 80, abs=1e-15)
    with pytest.raises(InputError):
        qf_variance(0.1, 0.0, 10)


def test_sigma_term_zero_for_constant_squares():
    col = np.where(np.arange(40) % 3 == 0, 1.0, -1.0)[:, None]
    assert sigma_term(col, np.array([0.7])) == 0.0
    g = np.random.default_rng(0)
    XG = g.standard_normal((50, 3))
    b = g.standard_normal(3)
    q = (XG @ b) ** 2
    expect = np.sum((q - b @ (XG.T @ XG / 50) @ b) ** 2) / 50 ** 2
    assert sigma_term(XG, b) == pytest.approx(expect, rel=1e-12)


def test_options_validation():
    X, y, _ = sparse_linear(30, 6, seed=1)
    data = Dataset(X, y)
    for bad in ([], [6], [1, 1]):
        with pytest.raises(InputError):
            qf(data, QFOptions(G=bad), "linear")
    with pytest.raises(InputError):
        qf(data, QFOptions(G=[0, 1], A=np.eye(3)), "linear")
    with pytest.raises(InputError):
        qf(data, QFOptions(G=[0, 1], A=np.array([[1.0, 0.5], [0.0, 1.0]])), "linear")
    with pytest.raises(InputError):
        QFOptions(G=[0], tau=(0.5, -1))
    with pytest.raises(InputError):
        qf(Dataset(X[:3], y[:3]), QFOptions(G=[0]), "linear")


def test_degenerate_zero_loading():
    g = np.random.default_rng(2)
    data = Dataset(g.standard_normal((60, 10)), g.standard_normal(60))
    res = qf(data, QFOptions(G=[0, 1, 2], lambda0=1e3, split=False), "linear")
    for row in res.rows:
        assert row.est_plugin == 0.0 and row.est_debias == 0.0
        assert row.std_err ** 2 == pytest.approx(row.tau / 60, rel=1e-14)


def test_single_coordinate_hand_computation():
    g = np.random.default_rng(3)
    n, p, j = 50, 5, 1
    X = g.standard_normal((n, p))
    y = X @ np.array([0.0, 1.0, 0.5, 0, 0]) + g.standard_normal(n)
    beta = np.array([0.05, 0.1, 0.8, 0.3, 0.0, 0.0])
    opts = QFOptions(G=[j], A=np.eye(1), split=False, rescale=1.0)
    res = qf(Dataset(X, y), opts, "linear", beta_init=beta)
    # by hand: loading (0, beta_j e_j), projection direction, correction and variance
    Xd = np.column_stack([np.ones(n), X])
    bj = beta[1 + j]
    x_aug = np.zeros(p + 1)
    x_aug[1 + j] = bj
    H = Xd.T @ Xd / n
    u = auto_tune(H, x_aug, n, p).u
    resid = y - Xd @ beta
    est = bj ** 2 + 2 * u @ (Xd.T @ resid) / n
    s2 = np.mean(resid ** 2)
    var_lf = s2 * np.sum((Xd @ u) ** 2) / n ** 2
    assert res.est_raw == pytest.approx(est, abs=1e-8)
    for row in res.rows:
        assert row.std_err ** 2 == pytest.approx(4 * var_lf + row.tau / n, abs=1e-10)
    # agrees with the context-based route
    ctx = build_context(X, y, beta, "linear", True, 0.05)
    assert ctx.correction(u) == pytest.approx(u @ (Xd.T @ resid) / n, abs=1e-12)


def test_sigma_case_uses_all_rows():
    X, y, _ = sparse_linear(120, 30, seed=4)
    res = qf(Dataset(X, y), QFOptions(G=[0, 1, 2]), "linear")
    assert res.n_tau == 60
    assert res.sigma_variance > 0


@pytest.mark.parametrize("seed", range(4))
def test_truncation_and_nesting(seed):
    g = np.random.default_rng(seed)
    X = g.standard_normal((80, 40))
    y = 0.2 * X[:, 0] + g.standard_normal(80)
    for A in (None, np.eye(5)):
        res = qf(Dataset(X, y), QFOptions(G=np.arange(5), A=A, tau=(0.25, 0.5, 1.0), seed=seed),
                 "linear")
        rows = res.rows
        for r in rows:
            assert r.est_debias >= 0 and r.ci_lower >= 0 and r.est_plugin >= 0
        ses = [r.std_err for r in rows]
        assert ses == sorted(ses) and len(set(ses)) == 3
        for a, b in zip(rows, rows[1:]):
            assert b.ci_lower <= a.ci_lower and a.ci_upper <= b.ci_upper


def test_split_determinism():
    X, y, _ = sparse_linear(90, 30, seed=5)
    opts = QFOptions(G=[0, 1], seed=11)
    assert qf(Dataset(X, y), opts, "linear") == qf(Dataset(X, y), opts, "linear")


@given(st.floats(-5, 5), st.lists(st.floats(0.01, 4), min_size=1, max_size=4, unique=True))
def test_quadratic_rows_contract(est_raw, variances):
    variances = sorted(variances)
    taus = tuple(range(1, len(variances) + 1))
    rows = quadratic_rows(1.0, est_raw, variances, taus, 0.05)
    for r in rows:
        assert r.est_debias == max(est_raw, 0.0)
        assert 0 <= r.ci_lower <= r.est_debias <= r.ci_upper
    raw = quadratic_rows(1.0, est_raw, variances, taus, 0.05, truncate=False)
    assert all(r.est_debias == est_raw for r in raw)
