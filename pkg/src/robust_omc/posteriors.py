"""Analytic posteriors of the two bundled experiments on grids."""

from __future__ import annotations

import numpy as np
from scipy import stats

from .metrics import GridDensity, GridSpec, density_on_grid
from .model import inverse_gamma
from .simulators import exp1_mean


def exp1_log_density(theta, observation: float = 0.0, lower: float = -2.5, upper: float = 2.5) -> np.ndarray:
    """Unnormalised log posterior of the first experiment under a uniform prior."""
    theta = np.asarray(theta, dtype=float)
    inside = (theta >= lower) & (theta <= upper)
    return np.where(inside, stats.norm.logpdf(observation, loc=exp1_mean(theta)), -np.inf)


def exp1_true_posterior(spec: GridSpec, observation: float = 0.0, lower: float = -2.5, upper: float = 2.5) -> GridDensity:
    """Posterior of the first experiment under a uniform prior.

    Density proportional to ``N(observation; mean(theta), 1)`` on
    ``[lower, upper]``.
    """
    return density_on_grid(lambda pts: exp1_log_density(pts[:, 0], observation, lower, upper), spec)


def exp2_log_density(
    mu,
    sigma,
    mu_obs: float = 1.0,
    sample_size: int = 25,
    mu_prior_sd: float = 5.0,
    sigma_shape: float = 0.2,
    sigma_scale: float = 1.0,
    parametrisation: str = "scale",
) -> np.ndarray:
    """Unnormalised log posterior of ``(mu, sigma)``; ``-inf`` where ``sigma <= 0``."""
    mu, sigma = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float))
    sigma_prior = inverse_gamma(sigma_shape, sigma_scale, parametrisation)
    out = np.full(mu.shape, -np.inf)
    ok = sigma > 0
    s = sigma[ok]
    out[ok] = (
        stats.norm.logpdf(mu_obs, loc=mu[ok], scale=s / np.sqrt(sample_size))
        + stats.norm.logpdf(mu[ok], scale=mu_prior_sd)
        + sigma_prior.logpdf(s)
    )
    return out


def exp2_true_posterior(
    spec: GridSpec,
    mu_obs: float = 1.0,
    sample_size: int = 25,
    mu_prior_sd: float = 5.0,
    sigma_shape: float = 0.2,
    sigma_scale: float = 1.0,
    parametrisation: str = "scale",
) -> GridDensity:
    """Posterior of ``(mu, sigma)`` given an observed sample mean.

    The sample mean is ``N(mu, sigma^2 / sample_size)``; priors are
    ``mu ~ N(0, mu_prior_sd^2)`` and ``sigma ~ InvGamma(sigma_shape,
    sigma_scale)``. Cells with ``sigma <= 0`` get zero mass.
    """

    def logp(pts):
        return exp2_log_density(
            pts[:, 0], pts[:, 1], mu_obs, sample_size, mu_prior_sd, sigma_shape, sigma_scale, parametrisation
        )

    return density_on_grid(logp, spec)
