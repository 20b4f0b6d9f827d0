"""Inference for group quadratic functionals beta_G' A beta_G and beta_G' Sigma_GG beta_G."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lf import (LFOptions, build_context, normal_pvalue, resolve_beta, solve_direction,
                 z_quantile)
from .model import Dataset, InputError, ModelKind
from .penalized import make_split


def check_group(G, p: int) -> np.ndarray:
    """0-based, sorted, distinct indices in range."""
    idx = np.asarray(G).reshape(-1)
    if idx.size == 0:
        raise InputError("index set G is empty")
    if not np.issubdtype(idx.dtype, np.integer):
        if not np.all(np.equal(np.mod(idx, 1), 0)):
            raise InputError("G must contain integer indices")
        idx = idx.astype(int)
    if np.any(idx < 0) or np.any(idx >= p):
        raise InputError(f"G indices must lie in [0, {p - 1}]")
    if np.unique(idx).size != idx.size:
        raise InputError("G indices must be distinct")
    return np.sort(idx)


def check_weight_matrix(A, size: int) -> np.ndarray | None:
    if A is None:
        return None
    A = np.asarray(A, dtype=float)
    if A.shape != (size, size):
        raise InputError(f"A must be {size}x{size}, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError("A has non-finite entries")
    if np.max(np.abs(A - A.T)) > 1e-10 * max(1.0, float(np.max(np.abs(A)))):
        raise InputError("A must be symmetric")
    return A


def check_tau(tau) -> tuple:
    tau = tuple(float(t) for t in np.atleast_1d(tau))
    if not tau or any(not (t > 0 and math.isfinite(t)) for t in tau):
        raise InputError("tau entries must be finite and positive")
    return tau


@dataclass(kw_only=True)
class QFOptions(LFOptions):
    G: object
    A: object = None
    tau: tuple = (0.25, 0.5, 1.0)
    split: bool = True

    def __post_init__(self):
        super().__post_init__()
        self.tau = check_tau(self.tau)


@dataclass
class QFRow:
    tau: float
    est_plugin: float
    est_debias: float
    std_err: float
    ci_lower: float
    ci_upper: float
    z_value: float
    p_value: float


@dataclass
class QFResult:
    rows: list
    est_raw: float
    base_variance: float = 0.0
    sigma_variance: float = 0.0
    n_tau: int = 0
    mu_used: float = float("nan")
    extras: dict = field(default_factory=dict)

    def row(self, tau: float) -> QFRow:
        for r in self.rows:
            if r.tau == tau:
                return r
        raise KeyError(tau)


def sigma_term(XG, bG) -> float:
    """(1/n^2) sum_i ((X_iG' b)^2 - b' Sigma_hat b)^2 over the rows of ``XG``."""
    XG = np.asarray(XG, dtype=float)
    q = (XG @ np.asarray(bG, dtype=float)) ** 2
    return float(np.sum((q - q.mean()) ** 2)) / XG.shape[0] ** 2


def cross_sigma_term(XG, b1, b2) -> float:
    """(1/n^2) sum_i (b1' X_iG X_iG' b2 - b1' Sigma_hat b2)^2."""
    XG = np.asarray(XG, dtype=float)
    q = (XG @ b1) * (XG @ b2)
    return float(np.sum((q - q.mean()) ** 2)) / XG.shape[0] ** 2


def qf_variance(base: float, tau: float, n: int, sigma_extra: float = 0.0,
                factor: float = 4.0) -> float:
    """``factor * base + sigma_extra + tau / n``.

    ``base`` is the (rescaled) linear-functional variance u' M u of the
    projection direction used for the correction.
    """
    if not tau > 0:
        raise InputError("tau must be positive")
    value = factor * base + sigma_extra + tau / n
    if not math.isfinite(value):
        raise InputError("variance is not finite")
    return value


def quadratic_rows(plugin, est_raw, variances, taus, alpha, truncate=True) -> list:
    z = z_quantile(alpha)
    est = max(est_raw, 0.0) if truncate else est_raw
    rows = []
    for tau, var in zip(taus, variances):
        se = math.sqrt(var)
        lo = est - z * se
        if truncate:
            lo = max(lo, 0.0)
        zv = est / se
        rows.append(QFRow(tau, float(plugin), float(est), se, lo, est + z * se, zv,
                          normal_pvalue(zv)))
    return rows


def embed_loading(p: int, G, vals, fit_intercept: bool) -> np.ndarray:
    x = np.zeros(p)
    x[G] = vals
    return np.concatenate([[0.0], x]) if fit_intercept else x


def fit_and_context(data: Dataset, model, opts: LFOptions, beta_init, split: bool):
    """Initial estimate plus debias context, optionally on a random half split."""
    if beta_init is not None or not split:
        beta = resolve_beta(data, model, opts, beta_init)
        infer = data
    else:
        plan = make_split(data.n, opts.seed)
        beta = resolve_beta(data.subset(plan.fit_indices), model, opts)
        infer = data.subset(plan.infer_indices)
    ctx = build_context(infer.X, infer.y, beta, model, opts.fit_intercept, opts.prob_filter)
    return beta, ctx


def slopes(beta, fit_intercept: bool) -> np.ndarray:
    return beta[1:] if fit_intercept else beta


def qf(data: Dataset, opts: QFOptions, model, beta_init=None) -> QFResult:
    """Debiased estimate of beta_G' A beta_G (or beta_G' Sigma_GG beta_G when A is None).

    One projection solve is shared by all tau values. The estimate and
    lower CI limits are truncated at zero.
    """
    model = ModelKind.parse(model)
    if model.is_binary:
        data.check_binary()
    G = check_group(opts.G, data.p)
    A = check_weight_matrix(opts.A, G.size)
    if opts.split and beta_init is None and data.n < 4:
        raise InputError("sample splitting needs n >= 4")
    beta, ctx = fit_and_context(data, model, opts, beta_init, opts.split)
    bG = slopes(beta, opts.fit_intercept)[G]
    if A is None:
        XG = data.X[:, G]
        W = XG.T @ XG / data.n
        extra = sigma_term(XG, bG)
    else:
        W = A
        extra = 0.0
    load = W @ bG
    plugin = float(bG @ W @ bG)
    n_tau = ctx.n_rows
    if not np.any(load != 0):
        # heavy shrinkage: nothing to correct
        variances = [qf_variance(0.0, t, n_tau, extra) for t in opts.tau]
        rows = quadratic_rows(plugin, plugin, variances, opts.tau, opts.alpha)
        return QFResult(rows, plugin, 0.0, extra, n_tau, extras={"degenerate": True})
    x_aug = embed_loading(data.p, G, load, opts.fit_intercept)
    direction = solve_direction(ctx, x_aug, data.p)
    est_raw = plugin + 2.0 * ctx.correction(direction.u)
    base = opts.rescale ** 2 * ctx.base_variance(direction.u)
    variances = [qf_variance(base, t, n_tau, extra) for t in opts.tau]
    rows = quadratic_rows(plugin, est_raw, variances, opts.tau, opts.alpha)
    return QFResult(rows, est_raw, base, extra, n_tau, direction.mu_used)
