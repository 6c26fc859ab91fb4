"""Bundled simulators for the two analytically tractable experiments, plus exact linear regions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import RegionDegenerateError
from .model import LinearGaussianSimulator, Prior, SeededSimulator, register_simulator
from .regions import EllipsoidRegion, IntervalRegion

#: Offset that makes the piecewise mean continuous at |theta| = 0.5.
EXP1_OFFSET = 0.5 - 0.5**4


def exp1_mean(theta) -> np.ndarray:
    """Deterministic part of the first simulator: ``theta^4`` near zero, linear in ``|theta|`` beyond 0.5."""
    theta = np.asarray(theta, dtype=float)
    a = np.abs(theta)
    return np.where(a <= 0.5, theta**4, a - EXP1_OFFSET)


def exp1_mean_derivative(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.where(np.abs(theta) <= 0.5, 4.0 * theta**3, np.sign(theta))


def _exp1_radius(level: float) -> float:
    """Inverse of the mean on ``|theta| >= 0``."""
    return level**0.25 if level <= 0.5**4 else level + EXP1_OFFSET


class Exp1Simulator(SeededSimulator):
    """Scalar simulator ``f(theta, u) = mean(theta) + u`` with ``u ~ N(0, 1)``.

    For ``u > 0`` no parameter reproduces an observation of zero; for
    small negative ``u`` two separate intervals do, and near ``u = 0`` the
    flat ``theta^4`` stretch yields a wide acceptance interval around zero.
    """

    param_dim = 1
    summary_dim = 1
    has_jacobian = True

    def draw_nuisance(self, rng, size=None):
        return rng.standard_normal(size) if size is not None else np.float64(rng.standard_normal())

    def evaluate(self, thetas, nuisance):
        return (exp1_mean(thetas[:, 0]) + nuisance)[:, None]

    def evaluate_jacobian(self, thetas, nuisance):
        return exp1_mean_derivative(thetas[:, 0])[:, None, None]

    def acceptance_region(self, seed: int, eps: float, obs: float = 0.0) -> IntervalRegion:
        """Exact ``{theta : |f(theta, u) - obs| <= eps}`` as a union of intervals.

        Raises
        ------
        RegionDegenerateError
            If no parameter meets the threshold.
        """
        u = float(self.nuisance(seed))
        lo, hi = obs - u - eps, obs - u + eps
        if hi < 0:
            raise RegionDegenerateError("no parameter reaches the threshold for this seed")
        r_hi = _exp1_radius(hi)
        r_lo = _exp1_radius(lo) if lo > 0 else 0.0
        if r_lo == 0.0:
            return IntervalRegion([[-r_hi, r_hi]])
        return IntervalRegion([[-r_hi, -r_lo], [r_lo, r_hi]])


def exp1_region_override(sim: Exp1Simulator, seed: int, eps: float, prior: Prior) -> IntervalRegion:
    """Region hook for boxed ROMC using the exact acceptance intervals."""
    return sim.acceptance_region(seed, eps)


class Exp2Simulator(SeededSimulator):
    """Sample mean of ``M`` Gaussian observations with mean ``mu`` and scale ``sigma``.

    The single summary cannot identify both parameters, so every seed's
    acceptance region is a thin band in the ``(mu, sigma)`` plane.
    """

    param_dim = 2
    summary_dim = 1
    has_jacobian = True

    def __init__(self, sample_size: int = 25):
        super().__init__()
        self.sample_size = int(sample_size)

    def draw_nuisance(self, rng, size=None):
        shape = (self.sample_size,) if size is None else (size, self.sample_size)
        return rng.standard_normal(shape)

    def evaluate(self, thetas, nuisance):
        zbar = np.mean(nuisance, axis=-1)
        return (thetas[:, 0] + thetas[:, 1] * zbar)[:, None]

    def evaluate_jacobian(self, thetas, nuisance):
        zbar = np.broadcast_to(np.mean(nuisance, axis=-1), (len(thetas),))
        return np.stack([np.ones(len(thetas)), zbar], axis=-1)[:, None, :]


def linear_acceptance_region(sim: LinearGaussianSimulator, seed: int, eps: float, obs) -> EllipsoidRegion:
    """Exact ``{theta : ||A theta + u - obs|| <= eps}`` for a full-column-rank ``A``.

    With ``theta*`` the least-squares solution and ``d*`` its residual norm the
    set is ``(theta - theta*)^T A^T A (theta - theta*) <= eps**2 - d***2``.

    Raises
    ------
    RegionDegenerateError
        If ``eps`` does not exceed the smallest attainable distance.
    """
    a = sim.matrix
    target = np.atleast_1d(np.asarray(obs, dtype=float)) - sim.nuisance(seed)
    center, *_ = np.linalg.lstsq(a, target, rcond=None)
    residual = float(np.sum((a @ center - target) ** 2))
    return EllipsoidRegion.from_quadratic(center, a.T @ a, eps**2 - residual)


@dataclass(frozen=True)
class LinearRegionOverride:
    """Region hook for boxed ROMC on a linear simulator with observation ``obs``."""

    obs: tuple[float, ...]

    def __call__(self, sim: LinearGaussianSimulator, seed: int, eps: float, prior: Prior) -> EllipsoidRegion:
        return linear_acceptance_region(sim, seed, eps, self.obs)


register_simulator("exp1", Exp1Simulator)
register_simulator("exp2", Exp2Simulator)
