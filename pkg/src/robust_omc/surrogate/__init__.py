"""Gaussian-process distance surrogates and Bayesian optimisation."""

from .bayesopt import BoConfig, BoResult, bayes_opt, expected_improvement
from .gp import GpSurrogate, Hyperparameters, gp_fit, gp_hessian, gp_predict

__all__ = [
    "BoConfig",
    "BoResult",
    "GpSurrogate",
    "Hyperparameters",
    "bayes_opt",
    "expected_improvement",
    "gp_fit",
    "gp_hessian",
    "gp_predict",
]
