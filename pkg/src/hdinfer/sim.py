"""Seeded data generators and Monte Carlo coverage studies.

Configs are JSON objects. Indices in configs are 1-based (``"G": "40:60"``
means covariates 40..60 inclusive); everything inside the package is
0-based. Normals come from numpy's ziggurat sampler on a Philox
counter-based stream; each replication ``r`` uses seed ``base_seed + r``
and spawns independent child streams for designs and outcomes, so
results do not depend on scheduling.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ._parallel import pmap
from .lf import LFOptions, lf
from .model import ConvergenceError, Dataset, InputError, ModelKind, link_value
from .projection import ProjectionError
from .qf import QFOptions, qf
from .two_sample import SampleError, TwoSampleData, cate, distance, inner_product

TARGETS = ("lf", "qf", "cate", "innprod", "dist")
FAILURE_LIMIT = 0.10


@dataclass(frozen=True)
class CovSpec:
    kind: str = "identity"
    rho: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "ar1"):
            raise InputError(f"covariance kind must be identity or ar1, got {self.kind!r}")
        if self.kind == "ar1" and not -1.0 < self.rho < 1.0:
            raise InputError(f"ar1 needs rho in (-1, 1), got {self.rho}")

    def matrix(self, p: int) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(p)
        lag = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
        return self.rho ** lag


@dataclass
class SimConfig:
    target: str
    model: str
    n: int
    p: int
    beta: np.ndarray
    n2: int | None = None
    beta2: np.ndarray | None = None
    cov: CovSpec = field(default_factory=CovSpec)
    cov2: CovSpec | None = None
    a0: float = 0.0
    a0_2: float | None = None
    loadings: list | None = None
    G: np.ndarray | None = None
    A: np.ndarray | None = None
    tau: tuple = (0.25, 0.5, 1.0)
    split: bool = True
    alpha: float = 0.05
    rescale: float = 1.1
    prob_filter: float = 0.05
    fit_intercept: bool = True
    include_intercept_in_loading: bool = False
    reps: int = 100
    seed: int = 0
    noise: bool = True

    def __post_init__(self):
        if self.target not in TARGETS:
            raise InputError(f"target must be one of {', '.join(TARGETS)}")
        self.model = ModelKind.parse(self.model).value
        if self.reps < 1:
            raise InputError("reps must be >= 1")
        if self.n < 2 or self.p < 1:
            raise InputError("need n >= 2 and p >= 1")
        self.beta = _check_beta(self.beta, self.p, "beta")
        if self.two_sample:
            if self.n2 is None or self.beta2 is None:
                raise InputError(f"target {self.target} needs n2 and beta2")
            self.beta2 = _check_beta(self.beta2, self.p, "beta2")
        if self.target in ("lf", "cate"):
            if not self.loadings:
                raise InputError(f"target {self.target} needs loadings")
            self.loadings = [np.asarray(x, dtype=float) for x in self.loadings]
            for x in self.loadings:
                if x.shape != (self.p,):
                    raise InputError(f"loadings must have length p={self.p}")
        else:
            if self.G is None:
                raise InputError(f"target {self.target} needs G")
            self.G = np.asarray(self.G, dtype=int)
            if self.G.size == 0 or self.G.min() < 0 or self.G.max() >= self.p:
                raise InputError("G indices out of range")
            if self.A is not None:
                self.A = np.asarray(self.A, dtype=float)
                if self.A.shape != (self.G.size, self.G.size):
                    raise InputError("A must be |G| x |G|")
        self.tau = tuple(float(t) for t in self.tau)

    @property
    def two_sample(self) -> bool:
        return self.target in ("cate", "innprod", "dist")

    @property
    def intercept2(self) -> float:
        return self.a0 if self.a0_2 is None else self.a0_2

    @property
    def covariance2(self) -> CovSpec:
        return self.cov if self.cov2 is None else self.cov2

    def lf_options(self, seed: int) -> LFOptions:
        return LFOptions(alpha=self.alpha, rescale=self.rescale, prob_filter=self.prob_filter,
                         fit_intercept=self.fit_intercept,
                         include_intercept_in_loading=self.include_intercept_in_loading,
                         seed=seed)

    def qf_options(self, seed: int) -> QFOptions:
        base = self.lf_options(seed)
        kw = {f.name: getattr(base, f.name) for f in fields(LFOptions)}
        return QFOptions(**kw, G=self.G, A=self.A, tau=self.tau, split=self.split)


def _check_beta(beta, p, name):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (p,):
        raise InputError(f"{name} must have length {p}")
    return beta


# ---------------------------------------------------------------- config io

def parse_index_set(spec, p: int) -> np.ndarray:
    """1-based ``"a:b"`` ranges, lists or comma strings to 0-based indices."""
    if isinstance(spec, str):
        out = []
        for part in spec.split(","):
            part = part.strip()
            if not part:
                continue
            if ":" in part:
                lo, hi = part.split(":")
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    else:
        out = [int(i) for i in spec]
    idx = np.asarray(out, dtype=int) - 1
    if idx.size == 0 or idx.min() < 0 or idx.max() >= p:
        raise InputError(f"index set {spec!r} out of range 1..{p}")
    return idx


def _sparse_vector(spec, p: int, name: str) -> np.ndarray:
    """``{"1": 0.5, "3:5": 0.2}`` (1-based keys) or a dense list."""
    if isinstance(spec, list):
        return _check_beta(spec, p, name)
    if not isinstance(spec, dict):
        raise InputError(f"{name} must be a list or an index->value mapping")
    out = np.zeros(p)
    for key, val in spec.items():
        vals = np.atleast_1d(np.asarray(val, dtype=float))
        idx = parse_index_set(key, p)
        if vals.size not in (1, idx.size):
            raise InputError(f"{name}[{key}]: value count does not match index count")
        out[idx] = vals
    return out


def _cov(spec) -> CovSpec:
    if spec is None:
        return CovSpec()
    if isinstance(spec, str):
        return CovSpec(spec)
    return CovSpec(spec.get("kind", "identity"), float(spec.get("rho", 0.0)))


_SCALARS = ("alpha", "rescale", "prob_filter", "fit_intercept", "include_intercept_in_loading",
            "reps", "seed", "split", "noise")


def config_from_dict(d: dict) -> SimConfig:
    try:
        p = int(d["p"])
        kw = dict(target=d["target"], model=d.get("model", "linear"), n=int(d.get("n", d.get("n1", 0))),
                  p=p, beta=_sparse_vector(d.get("beta", d.get("beta1", {})), p, "beta"),
                  cov=_cov(d.get("cov", d.get("cov1"))), a0=float(d.get("a0", 0.0)))
        if "n2" in d:
            kw["n2"] = int(d["n2"])
        if "beta2" in d:
            kw["beta2"] = _sparse_vector(d["beta2"], p, "beta2")
        if "cov2" in d:
            kw["cov2"] = _cov(d["cov2"])
        if "a0_2" in d:
            kw["a0_2"] = float(d["a0_2"])
        if "loadings" in d:
            kw["loadings"] = [_sparse_vector(x, p, "loading") for x in d["loadings"]]
        if "G" in d:
            kw["G"] = parse_index_set(d["G"], p)
        if d.get("A") is not None:
            A = d["A"]
            kw["A"] = np.eye(len(kw["G"])) if A == "identity" else np.asarray(A, dtype=float)
        if "tau" in d:
            kw["tau"] = tuple(np.atleast_1d(d["tau"]))
        for key in _SCALARS:
            if key in d:
                kw[key] = d[key]
        unknown = set(d) - set(kw) - {"n1", "beta1", "cov1", "A", "name", "description"}
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return SimConfig(**kw)
    except KeyError as exc:
        raise InputError(f"config is missing {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"invalid config: {exc}") from None


def load_config(path) -> SimConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise InputError("config must be a JSON object")
    return config_from_dict(raw)


# ---------------------------------------------------------------- generators

def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def gen_design(n: int, p: int, cov, seed) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma): standard normals times the Cholesky factor."""
    cov = _cov(cov) if not isinstance(cov, CovSpec) else cov
    Z = _rng(seed).standard_normal((n, p))
    if cov.kind == "identity":
        return Z
    try:
        L = np.linalg.cholesky(cov.matrix(p))
    except np.linalg.LinAlgError:
        raise InputError("covariance is not positive definite") from None
    return Z @ L.T


def gen_outcome(X, beta, a0: float, model, seed, noise: bool = True) -> np.ndarray:
    """Linear: a0 + X beta + N(0, 1) noise (``noise=False`` drops it). Binary: Bernoulli(f(.))."""
    model = ModelKind.parse(model)
    eta = a0 + np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float)
    rng = _rng(seed)
    if model is ModelKind.LINEAR:
        return eta + rng.standard_normal(eta.shape[0]) if noise else eta
    prob = np.asarray(link_value(model, eta))
    return (rng.random(eta.shape[0]) < prob).astype(float)


# ---------------------------------------------------------------- truth

def _pooled_cov(cfg: SimConfig, G) -> np.ndarray:
    S1 = cfg.cov.matrix(cfg.p)[np.ix_(G, G)]
    if not cfg.two_sample:
        return S1
    S2 = cfg.covariance2.matrix(cfg.p)[np.ix_(G, G)]
    return (cfg.n * S1 + cfg.n2 * S2) / (cfg.n + cfg.n2)


def truth_of(cfg: SimConfig) -> list[tuple[str, float]]:
    """Exact target values, one per report label."""
    model = ModelKind.parse(cfg.model)
    if cfg.target == "lf":
        out = []
        for j, x in enumerate(cfg.loadings, start=1):
            val = float(x @ cfg.beta) + (cfg.a0 if cfg.include_intercept_in_loading else 0.0)
            out.append((f"loading{j}", val))
        return out
    if cfg.target == "cate":
        out = []
        for j, x in enumerate(cfg.loadings, start=1):
            e1 = float(x @ cfg.beta)
            e2 = float(x @ cfg.beta2)
            if cfg.include_intercept_in_loading:
                e1 += cfg.a0
                e2 += cfg.intercept2
            out.append((f"loading{j}:linear", e2 - e1))
            if model.is_binary:
                f = lambda z: float(link_value(model, z))
                out.append((f"loading{j}:probability", f(e2) - f(e1)))
        return out
    G = cfg.G
    W = cfg.A if cfg.A is not None else _pooled_cov(cfg, G)
    if cfg.target == "qf":
        b = cfg.beta[G]
        val = float(b @ W @ b)
    elif cfg.target == "innprod":
        val = float(cfg.beta[G] @ W @ cfg.beta2[G])
    else:
        g = cfg.beta2[G] - cfg.beta[G]
        val = float(g @ W @ g)
    return [(f"tau={t:g}", val) for t in cfg.tau]


# ---------------------------------------------------------------- Monte Carlo

@dataclass
class Estimate:
    label: str
    est_plugin: float
    est_debias: float
    ci_lower: float
    ci_upper: float


@dataclass
class RepData:
    rep: int
    seed: int
    sample1: Dataset
    sample2: Dataset | None = None


@dataclass
class MCReport:
    label: str
    truth: float
    coverage: float
    avg_ci_length: float
    mean_abs_bias_plugin: float
    mean_abs_bias_debias: float
    failures: int
    reps: int
    error_grade: bool = False


@dataclass
class MCRun:
    reports: list
    records: list


def make_rep_data(cfg: SimConfig, rep: int) -> RepData:
    seed = cfg.seed + rep
    s_x1, s_y1, s_x2, s_y2 = np.random.SeedSequence(seed).spawn(4)
    X1 = gen_design(cfg.n, cfg.p, cfg.cov, s_x1)
    y1 = gen_outcome(X1, cfg.beta, cfg.a0, cfg.model, s_y1, cfg.noise)
    data = RepData(rep, seed, Dataset(X1, y1))
    if cfg.two_sample:
        X2 = gen_design(cfg.n2, cfg.p, cfg.covariance2, s_x2)
        y2 = gen_outcome(X2, cfg.beta2, cfg.intercept2, cfg.model, s_y2, cfg.noise)
        data.sample2 = Dataset(X2, y2)
    return data


def default_infer(cfg: SimConfig, rd: RepData) -> list[Estimate]:
    """Run the configured inference on one replication."""
    if cfg.target == "lf":
        L = np.column_stack(cfg.loadings)
        res = lf(rd.sample1, L, cfg.model, cfg.lf_options(rd.seed))
        return [Estimate(f"loading{j}", r.est_plugin, r.est_debias, r.ci_lower, r.ci_upper)
                for j, r in enumerate(res, start=1)]
    if cfg.target == "qf":
        res = qf(rd.sample1, cfg.qf_options(rd.seed), cfg.model)
        return [Estimate(f"tau={r.tau:g}", r.est_plugin, r.est_debias, r.ci_lower, r.ci_upper)
                for r in res.rows]
    ts = TwoSampleData(rd.sample1, rd.sample2)
    if cfg.target == "cate":
        L = np.column_stack(cfg.loadings)
        out = []
        for j, r in enumerate(cate(ts, L, cfg.model, cfg.lf_options(rd.seed)), start=1):
            for scale, res in (("linear", r.linear), ("probability", r.probability)):
                if res is not None:
                    out.append(Estimate(f"loading{j}:{scale}", res.est_plugin, res.est_debias,
                                        res.ci_lower, res.ci_upper))
        return out
    fn = inner_product if cfg.target == "innprod" else distance
    res = fn(ts, cfg.qf_options(rd.seed), cfg.model)
    return [Estimate(f"tau={r.tau:g}", r.est_plugin, r.est_debias, r.ci_lower, r.ci_upper)
            for r in res.rows]


_FAILURES = (ProjectionError, ConvergenceError, SampleError, InputError, np.linalg.LinAlgError)


def run_mc(cfg: SimConfig, infer=None, threads=None) -> MCRun:
    """Replicate ``cfg.reps`` times and summarise coverage per label.

    ``infer(cfg, rep_data) -> list[Estimate]`` replaces the real
    inference (a test hook). A replication that raises one of the solver
    or input errors is recorded as a failure for every label.
    """
    infer = infer or default_infer
    truths = truth_of(cfg)

    def one(rep):
        rd = make_rep_data(cfg, rep)
        try:
            return rep, rd.seed, {e.label: e for e in infer(cfg, rd)}, ""
        except _FAILURES as exc:
            return rep, rd.seed, None, f"{type(exc).__name__}: {exc}"

    results = pmap(one, range(cfg.reps), threads)
    records = []
    reports = []
    for label, truth in truths:
        cov, lens, bp, bd, fails = [], [], [], [], 0
        for rep, seed, ests, err in results:
            e = None if ests is None else ests.get(label)
            if e is None:
                fails += 1
                records.append({"rep": rep, "seed": seed, "label": label, "truth": truth,
                                "est_plugin": math.nan, "est_debias": math.nan,
                                "ci_lower": math.nan, "ci_upper": math.nan, "covered": "",
                                "failed": 1, "error": err or "missing label"})
                continue
            hit = e.ci_lower <= truth <= e.ci_upper
            cov.append(hit)
            lens.append(e.ci_upper - e.ci_lower)
            bp.append(abs(e.est_plugin - truth))
            bd.append(abs(e.est_debias - truth))
            records.append({"rep": rep, "seed": seed, "label": label, "truth": truth,
                            "est_plugin": e.est_plugin, "est_debias": e.est_debias,
                            "ci_lower": e.ci_lower, "ci_upper": e.ci_upper,
                            "covered": int(hit), "failed": 0, "error": ""})
        ok = len(cov)
        mean = (lambda a: float(np.mean(a))) if ok else (lambda a: math.nan)
        reports.append(MCReport(label, truth, mean(cov), mean(lens), mean(bp), mean(bd), fails,
                                cfg.reps, fails > FAILURE_LIMIT * cfg.reps))
    return MCRun(reports, records)


REPORT_FIELDS = [f.name for f in fields(MCReport)]
RECORD_FIELDS = ["rep", "seed", "label", "truth", "est_plugin", "est_debias", "ci_lower",
                 "ci_upper", "covered", "failed", "error"]


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_reports(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in reports:
            w.writerow([_fmt(getattr(r, k)) for k in REPORT_FIELDS])


def write_records(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for rec in sorted(records, key=lambda r: (r["label"], r["rep"])):
            w.writerow([_fmt(rec[k]) for k in RECORD_FIELDS])


def with_overrides(cfg: SimConfig, reps=None, seed=None) -> SimConfig:
    kw = {}
    if reps is not None:
        kw["reps"] = int(reps)
    if seed is not None:
        kw["seed"] = int(seed)
    return replace(cfg, **kw) if kw else cfg
