"""Two-sample targets: CATE, inner products and distances of regression vectors."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from ._parallel import pmap
from .lf import (DebiasContext, InferenceResult, LFOptions, build_context, loading_columns,
                 resolve_beta, solve_direction, wald_result)
from .model import Dataset, InputError, Loading, ModelKind, link_derivative, link_value
from .projection import ProjectionError
from .qf import (QFOptions, QFResult, check_group, check_weight_matrix, cross_sigma_term,
                 embed_loading, fit_and_context, quadratic_rows, sigma_term, slopes)

GRAM_MISMATCH = 0.2


class SampleError(RuntimeError):
    """A per-sample step failed; ``sample`` is 1 or 2."""

    def __init__(self, message, sample: int):
        super().__init__(f"sample {sample}: {message}")
        self.sample = sample


@dataclass(frozen=True)
class TwoSampleData:
    sample1: Dataset
    sample2: Dataset

    def __post_init__(self):
        if self.sample1.p != self.sample2.p:
            raise InputError(f"samples have different numbers of covariates "
                             f"({self.sample1.p} vs {self.sample2.p})")

    @property
    def p(self) -> int:
        return self.sample1.p

    def check_binary(self) -> None:
        for k, s in ((1, self.sample1), (2, self.sample2)):
            try:
                s.check_binary()
            except InputError as exc:
                raise InputError(f"sample {k}: {exc}") from None


@dataclass
class GammaEstimate:
    gamma_hat: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.gamma_hat)):
            raise InputError("gamma estimate is not finite")


@dataclass
class CATEResult:
    linear: InferenceResult
    probability: InferenceResult | None
    est1: float
    est2: float
    var1: float
    var2: float

    def report(self, probability: bool = False) -> InferenceResult:
        if probability:
            if self.probability is None:
                raise InputError("probability scale is only defined for binary models")
            return self.probability
        return self.linear


def _per_sample(func, items):
    """Run ``func(k, item)`` for samples k = 1, 2 and tag failures."""
    def run(pair):
        k, item = pair
        try:
            return func(k, item)
        except (InputError, ProjectionError, RuntimeError) as exc:
            if isinstance(exc, SampleError):
                raise
            if isinstance(exc, InputError):
                raise InputError(f"sample {k}: {exc}") from exc
            raise SampleError(str(exc), k) from exc
    return pmap(run, [(1, items[0]), (2, items[1])])


def _seeded(opts, k):
    return replace(opts, seed=opts.seed + k - 1)


def cate(ts: TwoSampleData, loadings, model, opts: LFOptions | None = None,
         beta_init1=None, beta_init2=None) -> list[CATEResult]:
    """f(x'beta2) - f(x'beta1) for each loading column, on both scales."""
    opts = opts or LFOptions()
    model = ModelKind.parse(model)
    if model.is_binary:
        ts.check_binary()
    cols = loading_columns(loadings, ts.p)

    def prepare(k, pair):
        data, init = pair
        o = _seeded(opts, k)
        beta = resolve_beta(data, model, o, init)
        return build_context(data.X, data.y, beta, model, o.fit_intercept, o.prob_filter)

    ctxs = _per_sample(prepare, [(ts.sample1, beta_init1), (ts.sample2, beta_init2)])

    def one(x):
        x_aug = Loading(x, opts.include_intercept_in_loading).augmented(opts.fit_intercept)
        parts = []
        for k, ctx in enumerate(ctxs, start=1):
            try:
                u = solve_direction(ctx, x_aug, ts.p)
            except ProjectionError as exc:
                raise SampleError(str(exc), k) from exc
            plugin = float(x_aug @ ctx.beta)
            parts.append((plugin, plugin + ctx.correction(u.u),
                          opts.rescale ** 2 * ctx.base_variance(u.u)))
        (p1, e1, v1), (p2, e2, v2) = parts
        lin = wald_result(p2 - p1, e2 - e1, v1 + v2, opts.alpha)
        prob = None
        if model.is_binary:
            f = lambda z: float(link_value(model, z))
            g = lambda z: float(link_derivative(model, z))
            prob = wald_result(f(p2) - f(p1), f(e2) - f(e1),
                               g(e1) ** 2 * v1 + g(e2) ** 2 * v2, opts.alpha)
        return CATEResult(lin, prob, e1, e2, v1, v2)

    return pmap(one, cols)


def _pooled_weight(ts: TwoSampleData, G, A):
    """A, or the row-pooled Sigma_GG with its per-row design block."""
    if A is not None:
        return A, None, False
    XG = np.vstack([ts.sample1.X[:, G], ts.sample2.X[:, G]])
    W = XG.T @ XG / XG.shape[0]
    S1 = ts.sample1.X[:, G].T @ ts.sample1.X[:, G] / ts.sample1.n
    S2 = ts.sample2.X[:, G].T @ ts.sample2.X[:, G] / ts.sample2.n
    scale = 0.5 * (np.linalg.norm(S1) + np.linalg.norm(S2))
    mismatch = scale > 0 and np.linalg.norm(S1 - S2) > GRAM_MISMATCH * scale
    if mismatch:
        warnings.warn("per-sample Gram matrices on G differ by more than 20% (Frobenius); "
                      "the pooled covariance target assumes a shared design covariance",
                      RuntimeWarning, stacklevel=3)
    return W, XG, mismatch


def _fit_both(ts, model, opts, beta_init1, beta_init2):
    def prepare(k, pair):
        data, init = pair
        return fit_and_context(data, model, _seeded(opts, k), init, opts.split)
    return _per_sample(prepare, [(ts.sample1, beta_init1), (ts.sample2, beta_init2)])


def _correct(k, ctx: DebiasContext, load, G, p, opts):
    """(correction, rescaled variance, mu) for one sample; zero load skips the solve."""
    if not np.any(load != 0):
        return 0.0, 0.0, float("nan")
    x_aug = embed_loading(p, G, load, opts.fit_intercept)
    try:
        u = solve_direction(ctx, x_aug, p)
    except ProjectionError as exc:
        raise SampleError(str(exc), k) from exc
    return ctx.correction(u.u), opts.rescale ** 2 * ctx.base_variance(u.u), u.mu_used


def _setup(ts, opts, model):
    model = ModelKind.parse(model)
    if model.is_binary:
        ts.check_binary()
    G = check_group(opts.G, ts.p)
    A = check_weight_matrix(opts.A, G.size)
    if opts.split:
        for k, s in ((1, ts.sample1), (2, ts.sample2)):
            if s.n < 4:
                raise InputError(f"sample {k}: sample splitting needs n >= 4")
    return model, G, A


def inner_product(ts: TwoSampleData, opts: QFOptions, model, beta_init1=None,
                  beta_init2=None) -> QFResult:
    """beta1_G' A beta2_G (pooled Sigma_GG when A is None); CI not truncated."""
    model, G, A = _setup(ts, opts, model)
    (beta1, ctx1), (beta2, ctx2) = _fit_both(ts, model, opts, beta_init1, beta_init2)
    b1 = slopes(beta1, opts.fit_intercept)[G]
    b2 = slopes(beta2, opts.fit_intercept)[G]
    W, XG, mismatch = _pooled_weight(ts, G, A)
    extra = 0.0 if XG is None else cross_sigma_term(XG, b1, b2)
    plugin = float(b1 @ W @ b2)
    c1, v1, mu1 = _correct(1, ctx1, W @ b2, G, ts.p, opts)
    c2, v2, mu2 = _correct(2, ctx2, W @ b1, G, ts.p, opts)
    est = plugin + c1 + c2
    n_tau = min(ctx1.n_rows, ctx2.n_rows)
    variances = [v1 + v2 + extra + t / n_tau for t in opts.tau]
    rows = quadratic_rows(plugin, est, variances, opts.tau, opts.alpha, truncate=False)
    return QFResult(rows, est, v1 + v2, extra, n_tau,
                    extras={"v1": v1, "v2": v2, "corr1": c1, "corr2": c2, "mu1": mu1,
                            "mu2": mu2, "gram_mismatch": mismatch})


def distance(ts: TwoSampleData, opts: QFOptions, model, beta_init1=None,
             beta_init2=None) -> QFResult:
    """gamma_G' A gamma_G with gamma = beta2 - beta1; estimate and lower limits truncated at 0."""
    model, G, A = _setup(ts, opts, model)
    (beta1, ctx1), (beta2, ctx2) = _fit_both(ts, model, opts, beta_init1, beta_init2)
    gamma = GammaEstimate(slopes(beta2, opts.fit_intercept) - slopes(beta1, opts.fit_intercept))
    gG = gamma.gamma_hat[G]
    W, XG, mismatch = _pooled_weight(ts, G, A)
    extra = 0.0 if XG is None else sigma_term(XG, gG)
    plugin = float(gG @ W @ gG)
    load = W @ gG
    c1, v1, mu1 = _correct(1, ctx1, load, G, ts.p, opts)
    c2, v2, mu2 = _correct(2, ctx2, load, G, ts.p, opts)
    est_raw = plugin - 2.0 * c1 + 2.0 * c2
    n_tau = min(ctx1.n_rows, ctx2.n_rows)
    variances = [4.0 * v1 + 4.0 * v2 + extra + t / n_tau for t in opts.tau]
    rows = quadratic_rows(plugin, est_raw, variances, opts.tau, opts.alpha)
    return QFResult(rows, est_raw, 4.0 * (v1 + v2), extra, n_tau,
                    extras={"v1": v1, "v2": v2, "corr1": c1, "corr2": c2, "mu1": mu1,
                            "mu2": mu2, "gram_mismatch": mismatch,
                            "gamma_hat": gamma.gamma_hat})
