"""Initial penalized estimator: column-weighted lasso with an unpenalized intercept.

Linear loss is (1/n) * RSS; the binary loss is the mean negative
log-likelihood. The L1 weight of covariate j is lambda0 * ||X_j||_2 / sqrt(n).
Solvers are cyclic coordinate descent (linear) and IRLS with a
coordinate-descent inner loop and step halving (logistic).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import ConvergenceError, Dataset, InputError, ModelKind, augment_intercept, link_value

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 100_000
_MIN_IRLS_WEIGHT = 1e-5


@dataclass
class PenalizedFit:
    beta_hat: np.ndarray
    lambda0: float
    intercept_fitted: bool
    objective_value: float
    n_iter: int
    kkt_residual: float = 0.0
    tol: float = DEFAULT_TOL
    objective_trace: list = field(default_factory=list)

    @property
    def slopes(self) -> np.ndarray:
        return self.beta_hat[1:] if self.intercept_fitted else self.beta_hat

    @property
    def intercept(self) -> float:
        return float(self.beta_hat[0]) if self.intercept_fitted else 0.0


@dataclass(frozen=True)
class SplitPlan:
    fit_indices: np.ndarray
    infer_indices: np.ndarray
    seed: int


@dataclass
class CVResult:
    lambda_min: float
    grid: np.ndarray
    mean_loss: np.ndarray
    skipped_folds: list


def make_split(n: int, seed: int) -> SplitPlan:
    """Random half split: ceil(n/2) rows for fitting, the rest for inference."""
    if n < 4:
        raise InputError(f"sample splitting needs n >= 4, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    k = (n + 1) // 2
    return SplitPlan(np.sort(perm[:k]), np.sort(perm[k:]), int(seed))


def column_scales(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.sqrt(np.sum(X * X, axis=0) / X.shape[0])


def _design(data: Dataset, fit_intercept: bool):
    Xd = augment_intercept(data.X) if fit_intercept else data.X.copy()
    scales = column_scales(data.X)
    if fit_intercept:
        scales = np.concatenate([[0.0], scales])
    return np.asfortranarray(Xd), scales


def _loss(model: ModelKind, Xd, y, beta) -> float:
    eta = Xd @ beta
    if model is ModelKind.LINEAR:
        r = y - eta
        return float(r @ r / len(y))
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def _gradient(model: ModelKind, Xd, y, beta) -> np.ndarray:
    eta = Xd @ beta
    n = len(y)
    if model is ModelKind.LINEAR:
        return -2.0 * Xd.T @ (y - eta) / n
    return -Xd.T @ (y - link_value(model, eta)) / n


def kkt_residual(grad, beta, pen) -> float:
    """Largest violation of the lasso stationarity conditions."""
    zero = beta == 0.0
    viol = np.where(zero, np.maximum(np.abs(grad) - pen, 0.0), np.abs(grad + pen * np.sign(beta)))
    return float(viol.max()) if viol.size else 0.0


def lambda_max(data: Dataset, model, fit_intercept: bool = True) -> float:
    """Smallest lambda0 at which every slope is zero."""
    model = ModelKind.parse(model)
    y = data.y
    if model is ModelKind.LINEAR:
        centre = y.mean() if fit_intercept else 0.0
        grad = 2.0 * data.X.T @ (y - centre) / data.n
    else:
        centre = y.mean() if fit_intercept else 0.5
        grad = data.X.T @ (y - centre) / data.n
    scales = column_scales(data.X)
    ok = scales > 0
    if not np.any(ok):
        return 1.0
    lm = float(np.max(np.abs(grad[ok]) / scales[ok]))
    return lm if lm > 0 else 1.0


def lambda_grid(data: Dataset, model, fit_intercept: bool = True, n_lambda: int = 100,
                min_ratio: float | None = None) -> np.ndarray:
    if min_ratio is None:
        min_ratio = 0.01 if data.n >= data.p else 0.05
    lm = lambda_max(data, model, fit_intercept)
    return np.geomspace(lm, lm * min_ratio, n_lambda)


def _cold_start(model: ModelKind, data: Dataset, fit_intercept: bool, d: int) -> np.ndarray:
    beta = np.zeros(d)
    if fit_intercept:
        ybar = data.y.mean()
        if model is ModelKind.LINEAR:
            beta[0] = ybar
        elif 0.0 < ybar < 1.0:
            beta[0] = np.log(ybar / (1.0 - ybar))
    return beta


def lasso_fit(data: Dataset, model, lambda0: float, fit_intercept: bool = True,
              tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
              beta_start=None, trace: bool = False,
              lambda_prev: float | None = None) -> PenalizedFit:
    """Fit the penalized estimator at a fixed ``lambda0``.

    Convergence requires both a maximal coordinate update below ``tol`` and
    a KKT residual below ``tol``. ``max_iter`` bounds the total number of
    coordinate sweeps. With ``trace=True`` the penalized objective is
    recorded after every sweep (linear) or IRLS step (logistic).

    ``lambda_prev`` (the previous grid value when warm-starting along a
    path) enables the sequential strong rule: coordinates it discards are
    skipped until the final KKT check shows a violation.
    """
    model = ModelKind.parse(model)
    if lambda0 < 0:
        raise InputError("lambda0 must be non-negative")
    if model.is_binary:
        data.check_binary()
    Xd, scales = _design(data, fit_intercept)
    pen = lambda0 * scales
    d = Xd.shape[1]
    if beta_start is None:
        beta = _cold_start(model, data, fit_intercept, d)
    else:
        beta = np.array(beta_start, dtype=float)
        if beta.shape != (d,):
            raise InputError(f"beta_start must have length {d}")
    if lambda_prev is not None and beta_start is not None:
        grad = _gradient(model, Xd, data.y, beta)
        mask = (pen == 0) | (beta != 0) | (np.abs(grad) >= 2.0 * pen - lambda_prev * scales)
    else:
        mask = np.ones(d, dtype=np.bool_)
    if model is ModelKind.LINEAR:
        return _fit_linear(data, Xd, pen, beta, mask, lambda0, fit_intercept, tol, max_iter, trace)
    return _fit_logistic(model, data, Xd, pen, beta, mask, lambda0, fit_intercept, tol, max_iter,
                         trace)


def _expand_mask(mask, grad, pen, tol) -> bool:
    """Add strong-rule-discarded coordinates that violate KKT; report whether any were."""
    bad = ~mask & (np.abs(grad) > pen + tol)
    if np.any(bad):
        mask |= bad
        return True
    return False


def _penalized_objective(model, Xd, y, beta, pen):
    return _loss(model, Xd, y, beta) + float(np.sum(pen * np.abs(beta)))


def _fit_linear(data, Xd, pen, beta, mask, lambda0, fit_intercept, tol, max_iter, trace):
    n = data.n
    y = data.y
    w = np.full(n, 2.0)
    xwx = 2.0 * np.sum(Xd * Xd, axis=0) / n
    r = y - Xd @ beta
    objective_trace = []
    sweeps = 0
    inner_tol = tol
    kkt = np.inf
    while sweeps < max_iter:
        if trace:
            s, dmax = _kernels.cd_wls(Xd, w, pen, beta, r, xwx, inner_tol, 1, mask)
            objective_trace.append(_penalized_objective(ModelKind.LINEAR, Xd, y, beta, pen))
        else:
            s, dmax = _kernels.cd_wls(Xd, w, pen, beta, r, xwx, inner_tol, max_iter - sweeps, mask)
        sweeps += s
        if dmax < inner_tol:
            grad = _gradient(ModelKind.LINEAR, Xd, y, beta)
            if _expand_mask(mask, grad, pen, tol):
                continue
            kkt = kkt_residual(grad, beta, pen)
            if kkt <= tol:
                obj = _penalized_objective(ModelKind.LINEAR, Xd, y, beta, pen)
                return PenalizedFit(beta, float(lambda0), fit_intercept, obj, sweeps, kkt, tol,
                                    objective_trace)
            inner_tol = max(inner_tol * 0.1, 1e-15)
    raise ConvergenceError(f"lasso did not converge in {max_iter} sweeps", last=beta,
                           diagnostics={"kkt": kkt})


def _fit_logistic(model, data, Xd, pen, beta, mask, lambda0, fit_intercept, tol, max_iter, trace):
    n = data.n
    y = data.y
    obj = _penalized_objective(model, Xd, y, beta, pen)
    objective_trace = [obj] if trace else []
    sweeps = 0
    inner_tol = tol
    delta = np.inf
    kkt = np.inf
    while sweeps < max_iter:
        eta = Xd @ beta
        prob = link_value(model, eta)
        W = np.maximum(prob * (1.0 - prob), _MIN_IRLS_WEIGHT)
        r = (y - prob) / W
        xwx = np.sum(W[:, None] * Xd * Xd, axis=0) / n
        cand = beta.copy()
        # loose inner solves while the Newton steps are still large
        step_tol = max(inner_tol * 0.1, min(1e-3, 0.01 * delta))
        s, _ = _kernels.cd_wls(Xd, W, pen, cand, r, xwx, step_tol, max_iter - sweeps, mask)
        sweeps += s
        step = cand - beta
        t = 1.0
        new_obj = _penalized_objective(model, Xd, y, cand, pen)
        while new_obj > obj and t > 1e-10:
            t *= 0.5
            cand = beta + t * step
            new_obj = _penalized_objective(model, Xd, y, cand, pen)
        if new_obj > obj:
            cand, new_obj = beta, obj
        delta = float(np.max(np.abs(cand - beta))) if cand.size else 0.0
        beta, obj = cand, new_obj
        if trace:
            objective_trace.append(obj)
        if delta < tol:
            grad = _gradient(model, Xd, y, beta)
            if _expand_mask(mask, grad, pen, tol):
                delta = np.inf
                continue
            kkt = kkt_residual(grad, beta, pen)
            if kkt <= tol:
                return PenalizedFit(beta, float(lambda0), fit_intercept, obj, sweeps, kkt, tol,
                                    objective_trace)
            inner_tol = max(inner_tol * 0.1, 1e-15)
    raise ConvergenceError(f"logistic lasso did not converge in {max_iter} sweeps", last=beta,
                           diagnostics={"kkt": kkt})


def _heldout_loss(model: ModelKind, Xd, y, beta) -> float:
    eta = Xd @ beta
    if model is ModelKind.LINEAR:
        return float(np.mean((y - eta) ** 2))
    return float(2.0 * np.mean(np.logaddexp(0.0, eta) - y * eta))


def _null_deviance(model: ModelKind, y, fit_intercept: bool) -> float:
    if model is ModelKind.LINEAR:
        c = y.mean() if fit_intercept else 0.0
        return float(np.mean((y - c) ** 2))
    ybar = y.mean() if fit_intercept else 0.5
    ybar = min(max(ybar, 1e-12), 1 - 1e-12)
    return float(-2.0 * np.mean(y * np.log(ybar) + (1 - y) * np.log(1 - ybar)))


def fit_path(data: Dataset, model, grid, fit_intercept: bool = True, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER):
    """Warm-started fits along a descending grid.

    For binary models the path stops early once the training deviance
    explains more than 99.9% of the null deviance (near-separation).
    Returns the list of fits actually computed.
    """
    model = ModelKind.parse(model)
    fits = []
    beta = None
    null_dev = _null_deviance(model, data.y, fit_intercept)
    prev = None
    for lam in grid:
        fit = lasso_fit(data, model, float(lam), fit_intercept, tol, max_iter, beta_start=beta,
                        lambda_prev=prev)
        fits.append(fit)
        prev = float(lam)
        beta = fit.beta_hat
        if model.is_binary and null_dev > 0:
            Xd, _ = _design(data, fit_intercept)
            dev = _heldout_loss(model, Xd, data.y, beta)
            if 1.0 - dev / null_dev > 0.999:
                break
    return fits


def cross_validate(data: Dataset, model, n_folds: int = 10, grid=None, seed: int = 0,
                   fit_intercept: bool = True, tol: float = 1e-5) -> CVResult:
    model = ModelKind.parse(model)
    if model.is_binary:
        data.check_binary()
    if grid is None:
        grid = lambda_grid(data, model, fit_intercept)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) > 0):
        raise InputError("lambda grid must be nonempty, positive and sorted descending")
    if not 2 <= n_folds <= data.n:
        raise InputError(f"n_folds must lie in [2, n], got {n_folds}")
    if grid.size == 1:
        return CVResult(float(grid[0]), grid, np.zeros(1), [])

    perm = np.random.default_rng(seed).permutation(data.n)
    folds = [np.sort(perm[k::n_folds]) for k in range(n_folds)]
    losses = []
    skipped = []
    for k, test in enumerate(folds):
        train = np.setdiff1d(np.arange(data.n), test, assume_unique=True)
        tr, te = data.subset(train), data.subset(test)
        if model.is_binary and (np.all(tr.y == tr.y[0]) or np.all(te.y == te.y[0])):
            skipped.append(k)
            continue
        fits = fit_path(tr, model, grid, fit_intercept, tol)
        Xte = augment_intercept(te.X) if fit_intercept else te.X
        fold_loss = np.empty(grid.size)
        for i in range(grid.size):
            fit = fits[min(i, len(fits) - 1)]
            fold_loss[i] = _heldout_loss(model, Xte, te.y, fit.beta_hat)
        losses.append(fold_loss)
    if skipped:
        warnings.warn(f"cross-validation skipped degenerate folds {skipped}", RuntimeWarning,
                      stacklevel=2)
    if not losses:
        raise InputError("every cross-validation fold is degenerate (single outcome class)")
    mean_loss = np.mean(losses, axis=0)
    best = int(np.argmin(mean_loss))
    return CVResult(float(grid[best]), grid, mean_loss, skipped)


def cv_select_lambda(data: Dataset, model, n_folds: int = 10, grid=None, seed: int = 0,
                     fit_intercept: bool = True) -> float:
    """Grid value minimising the mean held-out loss (MSE or binomial deviance)."""
    return cross_validate(data, model, n_folds, grid, seed, fit_intercept).lambda_min


def fit_initial(data: Dataset, model, fit_intercept: bool = True, lambda0: float | None = None,
                n_folds: int = 10, seed: int = 0, tol: float = DEFAULT_TOL) -> PenalizedFit:
    """Penalized fit with ``lambda0`` given or chosen by cross-validation."""
    model = ModelKind.parse(model)
    if lambda0 is not None:
        return lasso_fit(data, model, lambda0, fit_intercept, tol)
    cv = cross_validate(data, model, n_folds=min(n_folds, data.n), seed=seed,
                        fit_intercept=fit_intercept)
    # warm-start down the grid to the selected value
    path = cv.grid[cv.grid >= cv.lambda_min]
    beta = None
    prev = None
    fit = None
    for lam in path:
        fit = lasso_fit(data, model, float(lam), fit_intercept, tol, beta_start=beta,
                        lambda_prev=prev)
        beta = fit.beta_hat
        prev = float(lam)
    return fit
