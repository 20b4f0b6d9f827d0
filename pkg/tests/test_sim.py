import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdinfer.model import InputError
from hdinfer.sim import (CovSpec, Estimate, config_from_dict, gen_design, gen_outcome,
                         load_config, make_rep_data, parse_index_set, run_mc, truth_of,
                         with_overrides, write_records, write_reports)

CONFIGS = "configs"


def test_identity_design_moments():
    X = gen_design(20_000, 4, "identity", 0)
    S = X.T @ X / X.shape[0]
    np.testing.assert_allclose(S, np.eye(4), atol=0.04)
    np.testing.assert_allclose(X.mean(axis=0), 0, atol=0.03)


def test_ar1_design_lag_one():
    X = gen_design(2_000, 30, CovSpec("ar1", 0.5), 1)
    lag1 = np.mean([np.corrcoef(X[:, j], X[:, j + 1])[0, 1] for j in range(29)])
    assert abs(lag1 - 0.5) <= 0.07
    lag3 = np.mean([np.corrcoef(X[:, j], X[:, j + 3])[0, 1] for j in range(27)])
    assert abs(lag3 - 0.125) <= 0.07


def test_cov_validation():
    with pytest.raises(InputError):
        CovSpec("ar1", 1.0)
    with pytest.raises(InputError):
        CovSpec("banded")


def test_outcome_mean_and_noiseless():
    X = gen_design(5_000, 3, "identity", 2)
    beta = np.array([1.0, -2.0, 0.0])
    y = gen_outcome(X, beta, 0.5, "linear", 3)
    assert abs(np.mean(y - X @ beta) - 0.5) < 0.05
    assert abs(np.std(y - X @ beta) - 1.0) < 0.05
    np.testing.assert_array_equal(gen_outcome(X, beta, 0.5, "linear", 3, noise=False),
                                  0.5 + X @ beta)


def test_binary_outcome():
    X = np.zeros((20_000, 2))
    y = gen_outcome(X, np.zeros(2), 1.0, "logistic", 4)
    assert set(np.unique(y)) <= {0.0, 1.0}
    assert abs(y.mean() - 1 / (1 + math.exp(-1))) < 0.01


def test_generators_seeded():
    a = gen_design(10, 5, CovSpec("ar1", 0.3), 7)
    np.testing.assert_array_equal(a, gen_design(10, 5, CovSpec("ar1", 0.3), 7))
    assert not np.array_equal(a, gen_design(10, 5, CovSpec("ar1", 0.3), 8))
    cfg = load_config(f"{CONFIGS}/example5.json")
    r1, r2 = make_rep_data(cfg, 3), make_rep_data(cfg, 3)
    np.testing.assert_array_equal(r1.sample2.X, r2.sample2.X)
    assert r1.seed == cfg.seed + 3


@pytest.mark.parametrize("name, expected", [
    ("example1", [1.5, -1.25]),
    ("example2", [2.0, -2.5]),
    ("example3", [1.16, 1.16, 1.16]),
    ("example4", [2.6, 0.2423]),
    ("example5", [1.6, 1.6, 1.6]),
    ("example6", [0.3412, 0.3412, 0.3412]),
    ("null_linear", [0.0] * 5),
])
def test_truths_of_shipped_configs(name, expected):
    vals = [v for _, v in truth_of(load_config(f"{CONFIGS}/{name}.json"))]
    # expected values are compared at the precision they are written with
    digits = [len(str(e).split(".")[1]) if "." in str(e) else 0 for e in expected]
    assert [round(v, d) for v, d in zip(vals, digits)] == expected


def test_truth_ex3_exact():
    (_, v), *_ = truth_of(load_config(f"{CONFIGS}/example3.json"))
    assert v == pytest.approx(1.160078125, abs=1e-12)


def test_parse_index_set():
    np.testing.assert_array_equal(parse_index_set("1:3,7", 10), [0, 1, 2, 6])
    np.testing.assert_array_equal(parse_index_set([2, 4], 10), [1, 3])
    for bad in ("0:2", "9:11", ""):
        with pytest.raises(InputError):
            parse_index_set(bad, 10)


BASE = {"target": "lf", "model": "linear", "n": 30, "p": 5, "beta": {"1": 1.0},
        "loadings": [{"1": 1}], "reps": 4, "seed": 11}


@pytest.mark.parametrize("patch, msg", [
    ({"target": "glm"}, "target"),
    ({"model": "poisson"}, "unknown model"),
    ({"p": None}, "missing 'p'"),
    ({"loadings": None}, "loadings"),
    ({"beta": {"7": 1.0}}, "out of range"),
    ({"reps": 0}, "reps"),
    ({"bogus": 1}, "unknown"),
    ({"target": "qf"}, "G"),
    ({"target": "cate"}, "n2"),
])
def test_config_errors(patch, msg):
    d = dict(BASE)
    for k, v in patch.items():
        if v is None:
            d.pop(k)
        else:
            d[k] = v
    with pytest.raises(InputError, match=msg):
        config_from_dict(d)


def test_load_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InputError, match="JSON"):
        load_config(bad)
    with pytest.raises(InputError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    arr = tmp_path / "arr.json"
    arr.write_text(json.dumps([1, 2]))
    with pytest.raises(InputError, match="object"):
        load_config(arr)


def _exact_stub(cfg, rd):
    return [Estimate(label, t, t, t - 1, t + 1) for label, t in truth_of(cfg)]


def test_stub_inference_full_coverage():
    cfg = config_from_dict(BASE)
    run = run_mc(cfg, infer=_exact_stub)
    (rep,) = run.reports
    assert rep.coverage == 1.0 and rep.avg_ci_length == 2.0
    assert rep.mean_abs_bias_debias == 0.0 and rep.failures == 0 and not rep.error_grade


def test_single_rep_coverage_is_binary():
    cfg = with_overrides(config_from_dict(BASE), reps=1)
    shifted = lambda c, rd: [Estimate("loading1", 0, 0, 5, 6)]
    assert run_mc(cfg, infer=shifted).reports[0].coverage == 0.0
    assert run_mc(cfg, infer=_exact_stub).reports[0].coverage == 1.0


def test_failures_and_error_grade():
    cfg = with_overrides(config_from_dict(BASE), reps=10)

    def flaky(c, rd):
        if rd.rep < 2:
            raise InputError("boom")
        return _exact_stub(c, rd)

    rep = run_mc(cfg, infer=flaky).reports[0]
    assert rep.failures == 2 and rep.error_grade and rep.coverage == 1.0


def test_doubling_reps_extends_first_half():
    cfg = config_from_dict(BASE)
    a = run_mc(cfg).records
    b = run_mc(with_overrides(cfg, reps=8)).records
    assert b[:4] == a


def test_real_inference_threads_agree(monkeypatch):
    cfg = config_from_dict(BASE)
    one = run_mc(cfg, threads=1)
    two = run_mc(cfg, threads=3)
    assert one.records == two.records


def test_writers_roundtrip(tmp_path):
    cfg = config_from_dict(BASE)
    run = run_mc(cfg, infer=_exact_stub)
    write_reports(tmp_path / "r.csv", run.reports)
    write_records(tmp_path / "d.csv", run.records)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("label,truth,coverage")
    assert lines[1].split(",")[:3] == ["loading1", "1", "1"]
    assert len((tmp_path / "d.csv").read_text().splitlines()) == 1 + cfg.reps


@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(1, 6))
def test_design_shape_and_determinism(seed, n, p):
    X = gen_design(n, p, CovSpec("ar1", 0.2), seed)
    assert X.shape == (n, p) and np.all(np.isfinite(X))
    np.testing.assert_array_equal(X, gen_design(n, p, CovSpec("ar1", 0.2), seed))
