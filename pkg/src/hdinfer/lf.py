"""Bias-corrected inference for linear functionals x_new' beta."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from ._parallel import pmap
from .model import (Dataset, InputError, Loading, ModelKind, augment_intercept, link_value,
                    link_derivative, prob_filter_mask, weight)
from .penalized import fit_initial
from .projection import ProjectionDirection, ProjectionError, auto_tune, weighted_gram


def z_quantile(alpha: float) -> float:
    """Upper alpha/2 standard normal quantile."""
    return NormalDist().inv_cdf(1.0 - alpha / 2.0)


def normal_pvalue(z: float) -> float:
    """Two-sided Wald p-value 2(1 - Phi(|z|))."""
    if math.isnan(z):
        return 1.0
    return math.erfc(abs(z) / math.sqrt(2.0))


@dataclass
class LFOptions:
    alpha: float = 0.05
    rescale: float = 1.1
    prob_filter: float = 0.05
    fit_intercept: bool = True
    include_intercept_in_loading: bool = False
    lambda0: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.rescale >= 1.0:
            raise InputError(f"rescale must be >= 1, got {self.rescale}")
        if not 0.0 <= self.prob_filter < 0.5:
            raise InputError(f"prob_filter must lie in [0, 0.5), got {self.prob_filter}")
        if self.lambda0 is not None and not self.lambda0 >= 0:
            raise InputError("lambda0 must be nonnegative")


@dataclass
class InferenceResult:
    est_plugin: float
    est_debias: float
    std_err: float
    ci_lower: float
    ci_upper: float
    z_value: float
    p_value: float
    mu_used: float = float("nan")

    @property
    def variance(self) -> float:
        return self.std_err ** 2


def wald_result(plugin, est, variance, alpha, mu_used=float("nan")) -> InferenceResult:
    se = math.sqrt(max(variance, 0.0))
    half = z_quantile(alpha) * se
    if se > 0:
        z = est / se
    else:
        z = math.copysign(math.inf, est) if est != 0 else math.nan
    return InferenceResult(float(plugin), float(est), se, est - half, est + half, z,
                           normal_pvalue(z), float(mu_used))


@dataclass
class DebiasContext:
    """Everything the correction and variance need from one fitted sample.

    ``X`` holds the design in the coordinates of ``beta`` (intercept
    column first when fitted) restricted to the kept rows.
    """
    X: np.ndarray
    beta: np.ndarray
    model: ModelKind
    n_rows: int
    H: np.ndarray
    score: np.ndarray
    meat: np.ndarray

    @property
    def n_kept(self) -> int:
        return self.X.shape[0]

    def correction(self, u) -> float:
        return float(np.asarray(u) @ self.score)

    def base_variance(self, u) -> float:
        u = np.asarray(u)
        return float(u @ self.meat @ u)


def design_matrix(X, fit_intercept: bool) -> np.ndarray:
    return augment_intercept(X) if fit_intercept else np.asarray(X, dtype=float)


def noise_levels(X, y, beta, model) -> np.ndarray:
    """Per-row noise estimates: pooled residual mean square or f(1 - f)."""
    model = ModelKind.parse(model)
    eta = np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float)
    if model is ModelKind.LINEAR:
        resid = np.asarray(y, dtype=float) - eta
        return np.full(eta.shape[0], float(np.mean(resid ** 2)))
    f = np.asarray(link_value(model, eta))
    return f * (1.0 - f)


def _kept_rows(X, beta, model, prob_filter):
    if model.is_binary and prob_filter > 0:
        return prob_filter_mask(X, beta, model, prob_filter)
    return np.ones(X.shape[0], dtype=bool)


def debias_lf(X, y, beta, u, model, mask=None) -> float:
    """x_new' beta plus the weighted-residual correction u' (1/n') sum omega (y - f) X.

    ``u`` is a :class:`ProjectionDirection` or a plain vector; with a
    plain vector the plugin value is not known, so only the correction
    is returned.
    """
    model = ModelKind.parse(model)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        X, y = X[mask], y[mask]
    if X.shape[0] == 0:
        raise InputError("no observations left after filtering")
    eta = X @ beta
    score = X.T @ (np.asarray(weight(model, eta)) * (y - np.asarray(link_value(model, eta))))
    vec = u.u if isinstance(u, ProjectionDirection) else np.asarray(u, dtype=float)
    return float(vec @ score) / X.shape[0]


def variance_lf(u, X, beta, model, noise, rescale: float = 1.0, mask=None) -> float:
    """rescale^2 * u' [(1/n'^2) sum omega^2 sigma_i^2 X_i X_i'] u."""
    model = ModelKind.parse(model)
    X = np.asarray(X, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        X, noise = X[mask], noise[mask]
    if X.shape[0] == 0:
        raise InputError("no observations left after filtering")
    if np.any(noise < 0):
        raise InputError("noise levels must be nonnegative")
    vec = u.u if isinstance(u, ProjectionDirection) else np.asarray(u, dtype=float)
    w = np.asarray(weight(model, X @ beta))
    proj = X @ vec
    value = rescale ** 2 * float(np.sum(w ** 2 * noise * proj ** 2)) / X.shape[0] ** 2
    if not math.isfinite(value):
        raise InputError("variance is not finite")
    return value


def build_context(X, y, beta, model, fit_intercept: bool, prob_filter: float) -> DebiasContext:
    """Gram matrix, score vector and variance kernel for one sample."""
    model = ModelKind.parse(model)
    Xd = design_matrix(X, fit_intercept)
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (Xd.shape[1],):
        raise InputError(f"beta has length {beta.size}, expected {Xd.shape[1]}")
    noise = noise_levels(Xd, y, beta, model)
    mask = _kept_rows(Xd, beta, model, prob_filter)
    Xk, yk, noise = Xd[mask], y[mask], noise[mask]
    nk = Xk.shape[0]
    if nk == 0:
        raise InputError("probability filter removed every observation")
    eta = Xk @ beta
    w = np.asarray(weight(model, eta))
    f = np.asarray(link_value(model, eta))
    H = weighted_gram(Xk, beta, model)
    score = Xk.T @ (w * (yk - f)) / nk
    meat = (Xk * (w ** 2 * noise)[:, None]).T @ Xk / nk ** 2
    return DebiasContext(Xk, beta, model, Xd.shape[0], H, score, meat)


def resolve_beta(data: Dataset, model, opts: LFOptions, beta_init=None) -> np.ndarray:
    d = data.p + (1 if opts.fit_intercept else 0)
    if beta_init is not None:
        beta = np.asarray(beta_init, dtype=float).reshape(-1)
        if beta.shape != (d,):
            raise InputError(f"beta_init has length {beta.size}, expected {d}"
                             + (" (intercept first)" if opts.fit_intercept else ""))
        if not np.all(np.isfinite(beta)):
            raise InputError("beta_init has non-finite entries")
        return beta
    return fit_initial(data, model, fit_intercept=opts.fit_intercept, lambda0=opts.lambda0,
                       seed=opts.seed).beta_hat


def solve_direction(ctx: DebiasContext, x_aug, p: int) -> ProjectionDirection:
    return auto_tune(ctx.H, x_aug, ctx.n_kept, p)


def loading_columns(loadings, p: int) -> list[np.ndarray]:
    L = np.asarray(loadings, dtype=float)
    if L.ndim == 1:
        L = L[:, None]
    if L.ndim != 2 or L.shape[0] != p:
        raise InputError(f"loadings must have {p} rows (one column per loading), got {L.shape}")
    if L.shape[1] < 1:
        raise InputError("need at least one loading column")
    cols = []
    for j in range(L.shape[1]):
        try:
            cols.append(Loading(L[:, j]).x_new)
        except InputError as exc:
            raise InputError(f"loading column {j}: {exc}") from None
    return cols


def lf_single(ctx: DebiasContext, x_new, p: int, opts: LFOptions) -> InferenceResult:
    x_aug = Loading(x_new, opts.include_intercept_in_loading).augmented(opts.fit_intercept)
    direction = solve_direction(ctx, x_aug, p)
    plugin = float(x_aug @ ctx.beta)
    est = plugin + ctx.correction(direction.u)
    var = opts.rescale ** 2 * ctx.base_variance(direction.u)
    return wald_result(plugin, est, var, opts.alpha, direction.mu_used)


def lf(data: Dataset, loadings, model, opts: LFOptions | None = None,
       beta_init=None) -> list[InferenceResult]:
    """Debiased estimate and Wald CI for each loading column.

    ``loadings`` is p x L (or a single length-p vector). The initial fit
    is shared by every column; columns are solved independently and the
    results come back in column order.
    """
    opts = opts or LFOptions()
    model = ModelKind.parse(model)
    if model.is_binary:
        data.check_binary()
    cols = loading_columns(loadings, data.p)
    beta = resolve_beta(data, model, opts, beta_init)
    ctx = build_context(data.X, data.y, beta, model, opts.fit_intercept, opts.prob_filter)

    def run(item):
        j, x = item
        try:
            return lf_single(ctx, x, data.p, opts)
        except ProjectionError as exc:
            raise ProjectionError(f"loading column {j}: {exc}", exc.best,
                                  dict(exc.diagnostics, column=j)) from exc

    return pmap(run, list(enumerate(cols)))


def ci_probability(result: InferenceResult, model) -> tuple[float, float]:
    """CI for the case probability f(x_new' beta)."""
    model = ModelKind.parse(model)
    if not model.is_binary:
        raise InputError("probability CI is only defined for binary models")
    return float(link_value(model, result.ci_lower)), float(link_value(model, result.ci_upper))


def delta_scale(model, est: float) -> float:
    """f'(est), the delta-method factor."""
    return float(link_derivative(model, est))
