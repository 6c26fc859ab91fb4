"""Bayesian optimisation with Expected Improvement."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, stats
from scipy.stats import qmc

from ..exceptions import ConfigurationError
from .gp import GpSurrogate, gp_fit


@dataclass(frozen=True)
class BoConfig:
    """Bayesian-optimisation settings.

    Attributes
    ----------
    iterations : int
        Acquisition-driven evaluations after the initial design.
    restarts : int
        Starting points for maximising the acquisition.
    initial_design : int, optional
        Size of the Sobol design; defaults to five points per dimension.
    refit_every : int
        Re-optimise GP hyperparameters every this many iterations.
    xi : float
        Exploration margin of Expected Improvement.
    """

    iterations: int = 50
    restarts: int = 5
    initial_design: int | None = None
    refit_every: int = 5
    xi: float = 0.0

    def __post_init__(self):
        if self.iterations < 0 or self.restarts < 1 or self.refit_every < 1:
            raise ConfigurationError("invalid Bayesian-optimisation settings")


def expected_improvement(mean, var, best: float, xi: float = 0.0):
    """Closed-form EI for minimisation; zero wherever the variance is zero and
    the mean does not improve on ``best``."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    gain = best - mean - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, gain / np.where(sd > 0, sd, 1.0), 0.0)
    ei = np.where(sd > 0, gain * stats.norm.cdf(z) + sd * stats.norm.pdf(z), np.maximum(gain, 0.0))
    return np.maximum(ei, 0.0)


def _neg_ei_and_grad(x, gp: GpSurrogate, best, xi):
    mean, var, dmean, dvar = gp.predict_with_gradient(x)
    sd = np.sqrt(var)
    if sd < 1e-12:
        return -max(best - mean - xi, 0.0), np.zeros_like(x)
    z = (best - mean - xi) / sd
    cdf, pdf = stats.norm.cdf(z), stats.norm.pdf(z)
    ei = (best - mean - xi) * cdf + sd * pdf
    grad = -cdf * dmean + pdf * dvar / (2.0 * sd)
    return -ei, -grad


def maximise_ei(gp: GpSurrogate, best_x, best: float, lower, upper, restarts: int, rng, xi: float = 0.0):
    """Multi-start L-BFGS-B on EI; the first start is the incumbent."""
    bounds = list(zip(lower, upper))
    starts = [np.asarray(best_x, dtype=float)]
    starts += [lower + (upper - lower) * rng.random(len(lower)) for _ in range(restarts - 1)]
    top_x, top_val = starts[0], np.inf
    for x0 in starts:
        res = optimize.minimize(_neg_ei_and_grad, x0, args=(gp, best, xi), jac=True, method="L-BFGS-B", bounds=bounds)
        if res.fun < top_val:
            top_x, top_val = np.clip(res.x, lower, upper), res.fun
    return top_x


@dataclass(frozen=True)
class BoResult:
    """Outcome of :func:`bayes_opt`.

    Attributes
    ----------
    theta : ndarray
        Best evaluated point.
    distance : float
        Objective value at ``theta``.
    gp : GpSurrogate or None
        GP fitted to all finite evaluations.
    X, y : ndarray
        Evaluation log in order; failed evaluations are ``inf``.
    """

    theta: np.ndarray
    distance: float
    gp: GpSurrogate | None
    X: np.ndarray
    y: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step"] + [f"theta_{k}" for k in range(self.X.shape[1])] + ["distance"])
            for i, (x, v) in enumerate(zip(self.X, self.y)):
                writer.writerow([i, *map(repr, map(float, x)), repr(float(v))])


def sobol_design(n: int, lower, upper, rng) -> np.ndarray:
    sampler = qmc.Sobol(len(lower), scramble=True, seed=rng)
    with warnings.catch_warnings():
        # Sizes that are not powers of two are fine for a space-filling start.
        warnings.simplefilter("ignore", UserWarning)
        u = sampler.random(n)
    return lower + (upper - lower) * u


def bayes_opt(
    objective: Callable[[np.ndarray], float],
    lower,
    upper,
    cfg: BoConfig,
    rng: np.random.Generator,
) -> BoResult:
    """Minimise ``objective`` over a box with GP-based Expected Improvement.

    Non-finite objective values are logged as ``inf`` and excluded from GP
    training.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ConfigurationError("Bayesian optimisation needs bounded support")
    n_init = cfg.initial_design or 5 * len(lower)

    def evaluate(x):
        v = float(objective(x))
        return v if np.isfinite(v) else np.inf

    X = list(sobol_design(n_init, lower, upper, rng))
    y = [evaluate(x) for x in X]
    gp = None
    span = upper - lower
    for it in range(cfg.iterations):
        ya = np.asarray(y)
        finite = np.isfinite(ya)
        if finite.sum() < 2:
            x_next = lower + span * rng.random(len(lower))
        else:
            Xa = np.asarray(X)[finite]
            refit = gp is None or it % cfg.refit_every == 0
            gp = gp_fit(Xa, ya[finite], hyper_opt=refit, rng=rng, hyperparameters=None if refit else gp.hyper)
            i_best = int(np.argmin(ya[finite]))
            x_next = maximise_ei(gp, Xa[i_best], ya[finite][i_best], lower, upper, cfg.restarts, rng, cfg.xi)
            if np.min(np.max(np.abs(np.asarray(X) - x_next) / span, axis=1)) < 1e-9:
                x_next = lower + span * rng.random(len(lower))
        X.append(x_next)
        y.append(evaluate(x_next))
    X = np.asarray(X)
    y = np.asarray(y)
    finite = np.isfinite(y)
    gp = gp_fit(X[finite], y[finite], hyper_opt=True, rng=rng) if finite.sum() >= 2 else None
    i = int(np.argmin(y))
    return BoResult(X[i].copy(), float(y[i]), gp, X, y)
