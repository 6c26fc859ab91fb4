"""Rejection ABC, Optimisation Monte Carlo and heuristic OMC reweighting."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .exceptions import ConfigurationError
from .metrics import PosteriorEstimate, WeightedSample
from .model import (
    DistanceFn,
    Prior,
    SeededSimulator,
    euclidean,
    jacobian,
    nuisance_seeds,
    stage_rng,
)
from .optimise import OptimiserConfig, SeedObjective, minimise_distance
from .thresholds import select_epsilon

#: Curvature eigenvalues at or below this fraction of the largest one vanish.
ILL_CONDITIONING_FLOOR = 1e-12


def rejection_abc(
    sim: SeededSimulator,
    prior: Prior,
    obs,
    budget: int,
    accept: int,
    rng_seed: int,
    distance: DistanceFn = euclidean,
    chunk: int = 200_000,
) -> PosteriorEstimate:
    """Keep the ``accept`` prior draws closest to the observation.

    Parameters
    ----------
    budget : int
        Number of prior draws ``N``; each is simulated with fresh nuisance.
    accept : int
        Number of retained draws ``n``; ties are broken by draw order.

    Returns
    -------
    PosteriorEstimate
        Unit weights; ``epsilon`` is the largest accepted distance.
    """
    if not 0 < accept <= budget:
        raise ConfigurationError("need 0 < accept <= budget")
    obs = np.atleast_1d(np.asarray(obs, dtype=float))
    rng = stage_rng(rng_seed, 0, "reference")
    thetas, dists = [], []
    for start in range(0, budget, chunk):
        k = min(chunk, budget - start)
        theta = prior.sample(rng, k)
        y = sim.simulate_fresh(theta, rng)
        d = np.asarray(distance(y, obs), dtype=float)
        thetas.append(theta)
        dists.append(np.where(np.isfinite(d), d, np.inf))
    theta = np.concatenate(thetas)
    dist = np.concatenate(dists)
    keep = np.argsort(dist, kind="stable")[:accept]
    return PosteriorEstimate(
        theta=theta[keep],
        weight=np.ones(accept),
        method="rejection",
        epsilon=float(dist[keep].max()),
        seed_index=keep,
        distance=dist[keep],
        metadata={"budget": budget},
    )


def curvature_weights(eigenvalues: np.ndarray, prior_density: np.ndarray, scale: float | None = None):
    """OMC weights ``p * prod(lambda)^(-1/2)`` with singular-curvature bookkeeping.

    Parameters
    ----------
    eigenvalues : ndarray, shape (n, d)
        Eigenvalues of each curvature matrix; ``nan`` marks discarded ones.
    prior_density : ndarray, shape (n,)
    scale : float, optional
        Reference eigenvalue for the vanishing floor; defaults to the pooled
        maximum.

    Returns
    -------
    weight : ndarray
        ``inf`` where the curvature is singular and the prior is positive.
    leading : ndarray
        Finite coefficient over the retained non-vanishing eigenvalues.
    degeneracy : ndarray of int
        Number of vanishing eigenvalues per matrix.
    """
    lam = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    p = np.asarray(prior_density, dtype=float)
    kept = ~np.isnan(lam)
    if scale is None:
        scale = np.nanmax(lam) if kept.any() else 0.0
    vanishing = kept & (lam <= ILL_CONDITIONING_FLOOR * scale)
    regular = kept & ~vanishing
    log_det = np.sum(np.log(np.where(regular, lam, 1.0)), axis=1)
    leading = np.where(p > 0, p * np.exp(-0.5 * log_det), 0.0)
    degeneracy = vanishing.sum(axis=1)
    weight = np.where((degeneracy > 0) & (p > 0), np.inf, leading)
    return weight, leading, degeneracy


@dataclass(frozen=True)
class OmcResult:
    """Per-seed outcome of Optimisation Monte Carlo.

    Attributes
    ----------
    theta_star : ndarray, shape (n, d)
        Optimisation end points.
    d_star : ndarray, shape (n,)
        Distances at the end points.
    jacobians : ndarray, shape (n, s, d)
    seeds : ndarray of uint64
        Nuisance seeds, one per index.
    prior_density : ndarray
        Prior density at each end point.
    weight, leading, degeneracy : ndarray
        Output of :func:`curvature_weights`.
    epsilon : float
        Threshold above which seeds are excluded.
    master_seed : int
    """

    theta_star: np.ndarray
    d_star: np.ndarray
    jacobians: np.ndarray
    seeds: np.ndarray
    prior_density: np.ndarray
    weight: np.ndarray
    leading: np.ndarray
    degeneracy: np.ndarray
    epsilon: float
    master_seed: int

    @property
    def excluded(self) -> np.ndarray:
        return ~(self.d_star <= self.epsilon)

    @property
    def ill_conditioned(self) -> np.ndarray:
        return self.degeneracy > 0

    @property
    def curvatures(self) -> np.ndarray:
        return np.einsum("nsa,nsb->nab", self.jacobians, self.jacobians)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.curvatures)

    @property
    def samples(self) -> list[WeightedSample]:
        return [
            WeightedSample(t, float(w), int(s), float(d))
            for t, w, s, d in zip(self.theta_star, self.weight, self.seeds, self.d_star)
        ]

    def posterior(self, method: str = "omc") -> PosteriorEstimate:
        """Posterior over the non-excluded seeds."""
        return _posterior_from(self, self.weight, self.leading, self.degeneracy, method)

    def rows(self):
        """Per-seed records for CSV export."""
        for i in range(len(self.d_star)):
            yield {
                "seed_index": i,
                **{f"theta_{k}": float(v) for k, v in enumerate(self.theta_star[i])},
                "weight": float(self.weight[i]),
                "distance": float(self.d_star[i]),
                "excluded_flag": int(self.excluded[i]),
                "ill_conditioned_flag": int(self.ill_conditioned[i]),
            }


def _posterior_from(result: OmcResult, weight, leading, degeneracy, method: str) -> PosteriorEstimate:
    keep = np.flatnonzero(~result.excluded)
    return PosteriorEstimate(
        theta=result.theta_star[keep],
        weight=weight[keep],
        method=method,
        epsilon=result.epsilon,
        seed_index=keep,
        distance=result.d_star[keep],
        degeneracy=degeneracy[keep],
        leading=leading[keep],
        metadata={"ill_conditioned": int(np.sum(degeneracy[keep] > 0))},
    )


def optimise_seed(sim, prior, obs, distance, seed, master_seed, index, cfg):
    """Optimise one seed; returns ``(theta_star, d_star, jacobian, simulator_calls)``."""
    start = sim.calls
    objective = SeedObjective(sim, int(seed), obs, prior, distance)
    best = minimise_distance(objective, stage_rng(master_seed, index, "optimise"), cfg)
    jac = jacobian(sim, best.theta, int(seed))
    return best.theta, best.distance, jac, sim.calls - start


def _optimise_star(args):
    return optimise_seed(*args)


def optimise_seeds(sim, prior, obs, n, master_seed, distance=euclidean, cfg=OptimiserConfig(), workers=1):
    """Run :func:`optimise_seed` for ``n`` seeds; output ordered by seed index.

    Returns
    -------
    seeds, theta_star, d_star, jacobians : ndarray
    calls : int
        Simulator calls made, counted inside whichever process ran them.
    """
    seeds = nuisance_seeds(master_seed, n)
    obs = np.atleast_1d(np.asarray(obs, dtype=float))
    jobs = [(sim, prior, obs, distance, s, master_seed, i, cfg) for i, s in enumerate(seeds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            out = list(pool.map(_optimise_star, jobs, chunksize=max(1, n // (4 * workers))))
    else:
        out = [optimise_seed(*job) for job in jobs]
    theta_star = np.array([o[0] for o in out]).reshape(n, sim.param_dim)
    d_star = np.array([o[1] for o in out], dtype=float)
    jacs = np.array([o[2] for o in out]).reshape(n, sim.summary_dim, sim.param_dim)
    return seeds, theta_star, d_star, jacs, int(sum(o[3] for o in out))


def omc(
    sim: SeededSimulator,
    prior: Prior,
    obs,
    n: int,
    master_seed: int,
    distance: DistanceFn = euclidean,
    optimiser: OptimiserConfig = OptimiserConfig(),
    epsilon: float | None = None,
    quantile: float = 0.9,
    workers: int = 1,
) -> OmcResult:
    """Optimisation Monte Carlo with ``n`` nuisance seeds.

    Seeds whose end distance exceeds ``epsilon`` are kept in the result but
    flagged excluded. When ``epsilon`` is omitted it is the ``quantile`` of
    the end distances, matching the threshold ROMC would use.
    """
    if n < 1:
        raise ConfigurationError("n must be positive")
    seeds, theta_star, d_star, jacs, _ = optimise_seeds(
        sim, prior, obs, n, master_seed, distance, optimiser, workers
    )
    return omc_from_optimisation(seeds, theta_star, d_star, jacs, prior, master_seed, epsilon, quantile)


def omc_from_optimisation(seeds, theta_star, d_star, jacs, prior, master_seed, epsilon=None, quantile=0.9):
    if epsilon is None:
        epsilon = select_epsilon(d_star, quantile)
    density = prior.pdf(theta_star)
    lam = np.linalg.eigvalsh(np.einsum("nsa,nsb->nab", jacs, jacs))
    weight, leading, degeneracy = curvature_weights(lam, density)
    return OmcResult(
        theta_star=theta_star,
        d_star=d_star,
        jacobians=jacs,
        seeds=seeds,
        prior_density=density,
        weight=weight,
        leading=leading,
        degeneracy=degeneracy,
        epsilon=float(epsilon),
        master_seed=int(master_seed),
    )


@dataclass(frozen=True)
class HeuristicConfig:
    """Settings of the heuristic OMC weight repairs.

    Attributes
    ----------
    mode : {"pseudo_determinant", "diagonal_stabiliser"}
    drop_fraction : float
        Fraction of the smallest eigenvalues, pooled over all seeds, that is
        ignored in ``pseudo_determinant`` mode.
    stabiliser_percentile : float
        Percentile of the pooled absolute diagonal entries added to every
        diagonal in ``diagonal_stabiliser`` mode.
    stabiliser_value : float, optional
        Explicit diagonal shift overriding the percentile.
    """

    mode: Literal["pseudo_determinant", "diagonal_stabiliser"] = "pseudo_determinant"
    drop_fraction: float = 0.5
    stabiliser_percentile: float = 50.0
    stabiliser_value: float | None = None

    def __post_init__(self):
        if self.mode not in ("pseudo_determinant", "diagonal_stabiliser"):
            raise ConfigurationError(f"unknown heuristic mode {self.mode!r}")
        if not 0.0 <= self.drop_fraction < 1.0:
            raise ConfigurationError("drop_fraction must lie in [0, 1)")
        if not 0.0 < self.stabiliser_percentile <= 100.0:
            raise ConfigurationError("stabiliser_percentile must lie in (0, 100]")


def heuristic_reweight(result: OmcResult, prior: Prior, cfg: HeuristicConfig) -> PosteriorEstimate:
    """Recompute OMC weights with one of the two curvature repairs.

    ``pseudo_determinant`` discards the ``floor(drop_fraction * n * d)``
    smallest eigenvalues across all curvature matrices before taking
    determinants; ``diagonal_stabiliser`` adds a constant to every diagonal.
    """
    lam = result.eigenvalues()
    density = prior.pdf(result.theta_star)
    scale = float(np.max(np.clip(lam, 0.0, None)))
    if cfg.mode == "pseudo_determinant":
        n_drop = int(np.floor(cfg.drop_fraction * lam.size))
        if n_drop:
            if n_drop >= lam.size:
                raise ConfigurationError("every eigenvalue would be dropped")
            flat = lam.ravel().copy()
            flat[np.argsort(flat, kind="stable")[:n_drop]] = np.nan
            lam = flat.reshape(lam.shape)
        label = f"pseudo_determinant({cfg.drop_fraction:g})"
    else:
        shift = cfg.stabiliser_value
        if shift is None:
            diag = np.abs(np.diagonal(result.curvatures, axis1=1, axis2=2))
            shift = float(np.percentile(diag, cfg.stabiliser_percentile))
        curv = result.curvatures + shift * np.eye(lam.shape[1])
        lam = np.linalg.eigvalsh(curv)
        label = f"diagonal_stabiliser({shift:g})"
    weight, leading, degeneracy = curvature_weights(lam, density, scale)
    post = _posterior_from(result, weight, leading, degeneracy, "heuristic_omc")
    post.metadata["heuristic"] = label
    return post
