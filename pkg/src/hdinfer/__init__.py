"""Debiased confidence intervals for linear and quadratic functionals of
high-dimensional linear and logistic regression coefficients."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.1.0"

from .lf import InferenceResult, LFOptions, lf
from .model import ConvergenceError, Dataset, InputError, Loading, ModelKind
from .penalized import PenalizedFit, cross_validate, fit_initial, lasso_fit
from .projection import (ProjectionDirection, ProjectionError, ProjectionProblem, auto_tune,
                         solve_projection)
from .qf import QFOptions, QFResult, qf
from .two_sample import CATEResult, SampleError, TwoSampleData, cate, distance, inner_product

__all__ = [
    "CATEResult", "ConvergenceError", "Dataset", "InferenceResult", "InputError", "LFOptions",
    "Loading", "ModelKind", "PenalizedFit", "ProjectionDirection", "ProjectionError",
    "ProjectionProblem", "QFOptions", "QFResult", "SampleError", "TwoSampleData", "auto_tune",
    "cate", "cross_validate", "distance", "fit_initial", "inner_product", "lasso_fit", "lf",
    "qf", "solve_projection",
]
