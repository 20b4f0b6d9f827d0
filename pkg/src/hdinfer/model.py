"""Link families, weights and dataset containers shared by every inference path."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class InputError(ValueError):
    """Invalid user input (shapes, values, options)."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    ``last`` holds the final iterate so callers can inspect it.
    """

    def __init__(self, message, last=None, diagnostics=None):
        super().__init__(message)
        self.last = last
        self.diagnostics = diagnostics or {}


class ModelKind(enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"
    LOGISTIC_ALTER = "logistic_alter"

    @property
    def is_binary(self) -> bool:
        return self is not ModelKind.LINEAR

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise InputError(f"unknown model {value!r}; expected one of {choices}") from None


def _expit(z):
    # branch on sign so exp never overflows
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _scalar_out(z, out):
    return float(out) if np.ndim(z) == 0 else out


def link_value(model, z):
    """Mean function f(z): identity for linear, logistic CDF otherwise."""
    model = ModelKind.parse(model)
    if model is ModelKind.LINEAR:
        return _scalar_out(z, np.asarray(z, dtype=float).copy())
    return _scalar_out(z, _expit(np.atleast_1d(z)).reshape(np.shape(z)))


def link_derivative(model, z):
    """f'(z); for the logistic link evaluated as e^{-|z|} / (1 + e^{-|z|})^2."""
    model = ModelKind.parse(model)
    z = np.asarray(z, dtype=float)
    if model is ModelKind.LINEAR:
        return _scalar_out(z, np.ones_like(z))
    e = np.exp(-np.abs(z))
    return _scalar_out(z, e / (1.0 + e) ** 2)


def weight(model, z):
    """Debiasing weight omega(z).

    ``LOGISTIC`` uses the linearization weight 1/f'(z); ``LINEAR`` and
    ``LOGISTIC_ALTER`` use 1.
    """
    model = ModelKind.parse(model)
    z = np.asarray(z, dtype=float)
    if model is ModelKind.LOGISTIC:
        return _scalar_out(z, 1.0 / np.asarray(link_derivative(model, z)))
    return _scalar_out(z, np.ones_like(z))


def augment_intercept(X) -> np.ndarray:
    """Prepend a column of ones."""
    X = np.asarray(X, dtype=float)
    return np.column_stack([np.ones(X.shape[0]), X])


def prob_filter_mask(X, beta, model, threshold: float) -> np.ndarray:
    """Rows whose fitted probability lies in ``[threshold, 1 - threshold]``.

    Only defined for the binary families.
    """
    model = ModelKind.parse(model)
    if not model.is_binary:
        raise InputError("probability filter is undefined for the linear model")
    if not 0.0 <= threshold < 0.5:
        raise InputError(f"prob_filter threshold must lie in [0, 0.5), got {threshold}")
    prob = link_value(model, np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float))
    prob = np.atleast_1d(prob)
    return (prob >= threshold) & (prob <= 1.0 - threshold)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise InputError("X must be a 2-d array")
        y = y.reshape(-1) if y.ndim > 1 and 1 in y.shape else y
        if y.ndim != 1:
            raise InputError("y must be a vector")
        if X.shape[0] != y.shape[0]:
            raise InputError(f"X has {X.shape[0]} rows but y has length {y.shape[0]}")
        if X.shape[0] < 2 or X.shape[1] < 1:
            raise InputError("need n >= 2 observations and p >= 1 covariates")
        if not np.all(np.isfinite(X)):
            raise InputError("X contains non-finite entries")
        if not np.all(np.isfinite(y)):
            raise InputError("y contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def check_binary(self) -> None:
        if not np.all((self.y == 0.0) | (self.y == 1.0)):
            raise InputError("binary models need every y_i in {0, 1}")

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])


@dataclass(frozen=True)
class Loading:
    x_new: np.ndarray
    include_intercept: bool = False

    def __post_init__(self):
        x = np.asarray(self.x_new, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise InputError("loading has non-finite entries")
        if not np.linalg.norm(x) > 0:
            raise InputError("loading vector must be nonzero")
        object.__setattr__(self, "x_new", x)

    def augmented(self, fit_intercept: bool) -> np.ndarray:
        """Loading in the coordinates of the fitted coefficient vector."""
        if not fit_intercept:
            return self.x_new.copy()
        first = 1.0 if self.include_intercept else 0.0
        return np.concatenate([[first], self.x_new])
