"""Gradient-based minimisation of per-seed distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DistanceFn, Prior, SeededSimulator, batch_distance, euclidean, fd_steps, jacobian
from .exceptions import NumericalError


@dataclass(frozen=True)
class OptimiserConfig:
    """Settings of the multi-restart gradient descent.

    Attributes
    ----------
    restarts : int
        Number of starting points drawn from the prior.
    max_iter : int
        Iteration cap per restart.
    step_tol : float
        Stop once an accepted step is shorter than this.
    armijo : float
        Sufficient-decrease constant of the backtracking line search.
    """

    restarts: int = 5
    max_iter: int = 500
    step_tol: float = 1e-8
    armijo: float = 1e-4


@dataclass(frozen=True)
class OptimisationOutcome:
    theta: np.ndarray
    distance: float
    iterations: int


class SeedObjective:
    """Half squared distance ``phi = d^2 / 2`` for one fixed seed, with gradient."""

    def __init__(self, sim: SeededSimulator, seed: int, obs, prior: Prior, distance: DistanceFn = euclidean):
        self.sim = sim
        self.seed = seed
        self.obs = np.atleast_1d(np.asarray(obs, dtype=float))
        self.prior = prior
        self.distance = distance

    def dist(self, theta) -> float:
        return float(batch_distance(self.sim, theta, self.seed, self.obs, self.distance, self.prior)[0])

    def value(self, theta) -> float:
        d = self.dist(theta)
        return 0.5 * d * d

    def gradient(self, theta) -> np.ndarray:
        if self.distance is euclidean:
            resid = self.sim.simulate(theta, self.seed) - self.obs
            return jacobian(self.sim, theta, self.seed).T @ resid
        # Generic distances: central differences of phi itself.
        h = fd_steps(theta)
        probes = np.concatenate([theta + np.diag(h), theta - np.diag(h)])
        d = batch_distance(self.sim, probes, self.seed, self.obs, self.distance, self.prior)
        phi = 0.5 * d * d
        k = len(theta)
        return (phi[:k] - phi[k:]) / (2 * h)


def descend(objective: SeedObjective, start: np.ndarray, cfg: OptimiserConfig) -> OptimisationOutcome:
    """Gradient descent with an expanding backtracking line search.

    The trial step starts at twice the previously accepted one, so descent
    speeds up on flat stretches of the objective.
    """
    theta = np.asarray(start, dtype=float)
    phi = objective.value(theta)
    t = 0.5
    it = 0
    for it in range(1, cfg.max_iter + 1):
        try:
            g = objective.gradient(theta)
        except NumericalError:
            break
        gg = float(g @ g)
        if not np.isfinite(gg) or gg == 0.0:
            break
        gnorm = np.sqrt(gg)
        t = min(2.0 * t, 1e12)
        while True:
            cand = theta - t * g
            phi_c = objective.value(cand)
            if phi_c <= phi - cfg.armijo * t * gg:
                break
            t *= 0.5
            if t * gnorm < 1e-3 * cfg.step_tol:
                cand = None
                break
        if cand is None:
            break
        theta, phi = cand, phi_c
        if t * gnorm < cfg.step_tol:
            break
    return OptimisationOutcome(theta, float(np.sqrt(2.0 * phi)), it)


def minimise_distance(
    objective: SeedObjective,
    rng: np.random.Generator,
    cfg: OptimiserConfig = OptimiserConfig(),
) -> OptimisationOutcome:
    """Best of ``cfg.restarts`` descents from prior draws; ties keep the first."""
    starts = objective.prior.sample(rng, cfg.restarts)
    best = None
    for start in starts:
        out = descend(objective, start, cfg)
        if best is None or out.distance < best.distance:
            best = out
    return best
