"""Robust Optimisation Monte Carlo.

Each nuisance seed defines an acceptance region, the set of parameters
whose simulated summary lies within ``epsilon`` of the observation. ROMC
builds a proposal region around each seed's optimisation end point, draws
uniformly from it and importance-weights every draw by
``1{d <= epsilon} * prior * volume``.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np

from .baseline import OmcResult, omc_from_optimisation, optimise_seeds
from .exceptions import ConfigurationError, NumericalError, RegionDegenerateError
from .metrics import PosteriorEstimate, RomcSample
from .model import DistanceFn, Prior, SeededSimulator, batch_distance, euclidean, nuisance_seeds, stage_rng
from .optimise import OptimiserConfig
from .regions import (
    BoxRegion,
    Proposal,
    Region,
    build_box,
    clip_to_support,
    direction_steps,
    expand_box_alternative,
    fit_ellipse,
    principal_axes,
)
from .surrogate import BoConfig, BoResult, bayes_opt
from .thresholds import QuantileConfig, select_epsilon

Evaluator = Literal["true", "gp"]
RegionOverride = Callable[[SeededSimulator, int, float, Prior], Region]


@dataclass(frozen=True)
class AcceptanceCheck:
    """Acceptance threshold and which distance evaluates it."""

    epsilon: float
    evaluator: Evaluator = "true"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.evaluator not in ("true", "gp"):
            raise ConfigurationError("evaluator must be 'true' or 'gp'")


@dataclass(frozen=True)
class Thresholds:
    accept: float
    proposal: float
    loose: float

    @classmethod
    def from_quantiles(cls, d_star, q: QuantileConfig) -> "Thresholds":
        return cls(*(select_epsilon(d_star, v) for v in q.as_list()))


@dataclass(frozen=True)
class BoxConfig:
    """Line-scan settings for box construction.

    Attributes
    ----------
    eta_fraction : float
        Initial step as a fraction of the prior range per axis.
    refinements : int
        Number of step halvings per scan.
    curvature_step : bool
        Cap the initial step at the linearised distance to the region
        boundary, ``epsilon / sqrt(eigenvalue)``.
    mc_volume_points : int
        Monte-Carlo points for volumes of regions clipped by the support.
    """

    eta_fraction: float = 0.05
    refinements: int = 4
    curvature_step: bool = True
    mc_volume_points: int = 10_000


@dataclass(frozen=True)
class SeedReport:
    """Diagnostics for one seed's pipeline."""

    index: int
    seed: int
    d_star: float
    status: str
    kind: str = ""
    volume: float = 0.0
    clipped: bool = False
    message: str = ""


def romc_weights(thetas, volume: float, prior: Prior, check: AcceptanceCheck, distance_fn):
    """Importance weights of proposal draws.

    Parameters
    ----------
    thetas : ndarray, shape (m, d)
    volume : float
        Proposal volume; the uniform proposal density is ``1 / volume``.
    prior : Prior
    check : AcceptanceCheck
    distance_fn : callable
        Distance evaluator matching ``check.evaluator``.

    Returns
    -------
    weights, indicator, distances, prior_density : ndarray
    """
    if not volume > 0:
        raise ConfigurationError("proposal volume must be positive")
    thetas = np.atleast_2d(thetas)
    distances = np.asarray(distance_fn(thetas), dtype=float)
    indicator = distances <= check.epsilon
    density = prior.pdf(thetas)
    weights = np.where(indicator, density * volume, 0.0)
    return weights, indicator, distances, density


def romc_samples(thetas, weights, indicator, parent: int) -> list[RomcSample]:
    return [RomcSample(t, float(w), bool(i), parent) for t, w, i in zip(thetas, weights, indicator)]


@dataclass(frozen=True)
class SeedDraws:
    """Weighted draws of one seed (empty when the seed was skipped)."""

    report: SeedReport
    theta: np.ndarray
    weight: np.ndarray
    indicator: np.ndarray
    distance: np.ndarray
    prior_density: np.ndarray
    volume: float = 0.0
    weighting_calls: int = 0
    total_calls: int = 0


@dataclass(frozen=True)
class RomcResult:
    """ROMC posterior together with everything needed to re-threshold it.

    Attributes
    ----------
    posterior : PosteriorEstimate
        Draws from every non-excluded seed, rejected draws included with
        zero weight.
    thresholds : Thresholds
    reports : list of SeedReport
    prior_density, volume, parent_d_star : ndarray
        Per-draw quantities reused by :func:`rethreshold`.
    calls : dict
        Simulator calls per stage.
    timings : dict
        Wall time per stage in seconds.
    """

    posterior: PosteriorEstimate
    thresholds: Thresholds
    reports: list[SeedReport]
    prior_density: np.ndarray
    volume: np.ndarray
    parent_d_star: np.ndarray
    calls: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def samples(self) -> list[RomcSample]:
        return self.posterior.samples

    def region_summary(self) -> dict:
        counts: dict[str, int] = {}
        for r in self.reports:
            key = r.status if r.status != "ok" else r.kind
            counts[key] = counts.get(key, 0) + 1
        vols = [r.volume for r in self.reports if r.status == "ok"]
        return {
            "counts": counts,
            "mean_volume": float(np.mean(vols)) if vols else 0.0,
            "clipped": sum(r.clipped for r in self.reports),
        }

    def rows(self):
        p = self.posterior
        for i in range(len(p)):
            yield {
                "parent_seed_index": int(p.seed_index[i]),
                **{f"theta_{k}": float(v) for k, v in enumerate(p.theta[i])},
                "weight": float(p.weight[i]),
                "indicator": int(p.indicator[i]),
                "distance": float(p.distance[i]),
                "prior_density": float(self.prior_density[i]),
                "volume": float(self.volume[i]),
                "parent_d_star": float(self.parent_d_star[i]),
            }


def _assemble(draws: list[SeedDraws], thresholds: Thresholds, method, dim, calls, timings, metadata) -> RomcResult:
    kept = [d for d in draws if len(d.weight)]
    if kept:
        cat = lambda attr: np.concatenate([getattr(d, attr) for d in kept])  # noqa: E731
        theta = np.concatenate([d.theta for d in kept])
        parent = np.concatenate([np.full(len(d.weight), d.report.index) for d in kept])
        vol = np.concatenate([np.full(len(d.weight), d.volume) for d in kept])
        dstar = np.concatenate([np.full(len(d.weight), d.report.d_star) for d in kept])
        weight, indicator, dist, dens = cat("weight"), cat("indicator"), cat("distance"), cat("prior_density")
    else:
        theta = np.empty((0, dim))
        parent = np.empty(0, dtype=int)
        weight = indicator = dist = dens = vol = dstar = np.empty(0)
        indicator = indicator.astype(bool)
    posterior = PosteriorEstimate(
        theta=theta,
        weight=weight,
        method=method,
        epsilon=thresholds.accept,
        seed_index=parent,
        distance=dist,
        indicator=indicator,
        metadata=dict(metadata),
    )
    calls = dict(calls)
    calls["weighting"] = int(sum(d.weighting_calls for d in draws))
    calls["regions"] = int(sum(d.total_calls for d in draws)) - calls["weighting"]
    return RomcResult(posterior, thresholds, [d.report for d in draws], dens, vol, dstar, calls, timings)


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [fn(job) for job in jobs]


def _counted(fn, job) -> SeedDraws:
    sim = job[0]
    start = sim.calls
    out = fn(job)
    return replace(out, total_calls=sim.calls - start)


def _boxed_job(job):
    return _counted(_boxed_seed, job)


def _ellipsoidal_job(job):
    return _counted(_ellipsoidal_seed, job)


def _skip(index, seed, d_star, status, message, dim) -> SeedDraws:
    empty = np.empty(0)
    report = SeedReport(index, int(seed), float(d_star), status, message=message)
    return SeedDraws(report, np.empty((0, dim)), empty, empty.astype(bool), empty, empty)


def _weigh(index, seed, d_star, kind, proposal: Proposal, m, prior, check, distance_fn, sim, rng_sample):
    thetas = proposal.sample(m, rng_sample)
    before = sim.calls
    w, ind, dist, dens = romc_weights(thetas, proposal.volume, prior, check, distance_fn)
    report = SeedReport(index, int(seed), float(d_star), "ok", kind, proposal.volume, proposal.clipped)
    return SeedDraws(report, thetas, w, ind, dist, dens, proposal.volume, sim.calls - before)


def prior_ranges(prior: Prior) -> np.ndarray:
    span = prior.upper - prior.lower
    if not np.all(np.isfinite(span)):
        raise ConfigurationError("box construction needs a bounded prior support")
    return span


# Boxed ROMC ------------------------------------------------------------------------


def _boxed_seed(job) -> SeedDraws:
    (sim, prior, obs, distance, master_seed, index, seed, theta_star, d_star, jac,
     thresholds, m, box_cfg, region_override) = job
    dim = sim.param_dim
    if not d_star <= thresholds.accept:
        return _skip(index, seed, d_star, "excluded", "end distance above epsilon", dim)

    def dist_fn(thetas):
        return batch_distance(sim, thetas, seed, obs, distance, prior)

    try:
        if region_override is not None:
            region, kind = region_override(sim, int(seed), thresholds.accept, prior), "analytic"
        else:
            curvature = jac.T @ jac
            lam, axes = principal_axes(curvature)
            eps_cap = thresholds.proposal if box_cfg.curvature_step else None
            eta = direction_steps(axes, lam, box_cfg.eta_fraction * prior_ranges(prior), eps_cap)
            region = build_box(dist_fn, theta_star, curvature, thresholds.proposal, eta, box_cfg.refinements)
            kind = "box"
        proposal = clip_to_support(
            region, prior.lower, prior.upper, stage_rng(master_seed, index, "volume"), box_cfg.mc_volume_points
        )
    except (RegionDegenerateError, NumericalError) as exc:
        return _skip(index, seed, d_star, "degenerate", str(exc), dim)
    check = AcceptanceCheck(thresholds.accept, "true")
    rng = stage_rng(master_seed, index, "sample")
    return _weigh(index, seed, d_star, kind, proposal, m, prior, check, dist_fn, sim, rng)


def run_boxed_romc(
    sim: SeededSimulator,
    prior: Prior,
    obs,
    n: int,
    m: int,
    master_seed: int,
    distance: DistanceFn = euclidean,
    quantiles: QuantileConfig = QuantileConfig(),
    optimiser: OptimiserConfig = OptimiserConfig(),
    box: BoxConfig = BoxConfig(),
    omc_result: OmcResult | None = None,
    region_override: RegionOverride | None = None,
    thresholds: Thresholds | None = None,
    workers: int = 1,
) -> RomcResult:
    """Boxed ROMC: gradient-based end points and curvature-aligned boxes.

    Parameters
    ----------
    omc_result : OmcResult, optional
        Reuse end points and Jacobians from a previous OMC run with the same
        master seed instead of optimising again.
    region_override : callable, optional
        ``(sim, seed, epsilon, prior) -> region`` returning the exact
        acceptance region when it is known in closed form.
    thresholds : Thresholds, optional
        Absolute thresholds overriding ``quantiles``.
    """
    if m < 1:
        raise ConfigurationError("m must be positive")
    obs = np.atleast_1d(np.asarray(obs, dtype=float))
    t0 = time.perf_counter()
    opt_calls = 0
    if omc_result is None:
        seeds, theta_star, d_star, jacs, opt_calls = optimise_seeds(
            sim, prior, obs, n, master_seed, distance, optimiser, workers
        )
        omc_result = omc_from_optimisation(seeds, theta_star, d_star, jacs, prior, master_seed, None, quantiles.accept)
    elif omc_result.master_seed != master_seed or len(omc_result.d_star) != n:
        raise ConfigurationError("supplied OMC result does not match n and master_seed")
    calls = {"optimisation": opt_calls}
    t1 = time.perf_counter()
    if thresholds is None:
        thresholds = Thresholds.from_quantiles(omc_result.d_star, quantiles)
    jobs = [
        (sim, prior, obs, distance, master_seed, i, omc_result.seeds[i], omc_result.theta_star[i],
         float(omc_result.d_star[i]), omc_result.jacobians[i], thresholds, m, box, region_override)
        for i in range(n)
    ]
    draws = _map(_boxed_job, jobs, workers)
    timings = {"optimisation": t1 - t0, "regions_and_weights": time.perf_counter() - t1}
    return _assemble(draws, thresholds, "boxed_romc", sim.param_dim, calls, timings, {"m": m, "n": n})


# Ellipsoidal ROMC ----------------------------------------------------------------


def _bo_seed(job):
    sim, prior, obs, distance, master_seed, index, seed, cfg = job

    def objective(theta):
        return batch_distance(sim, theta, seed, obs, distance, prior)[0]

    try:
        return bayes_opt(objective, prior.lower, prior.upper, cfg, stage_rng(master_seed, index, "bayesopt"))
    except (NumericalError, ConfigurationError):
        return None


def bayes_opt_seeds(sim, prior, obs, n, master_seed, distance=euclidean, cfg=BoConfig(), workers=1):
    """Bayesian optimisation for every seed; ``None`` marks a failed seed."""
    obs = np.atleast_1d(np.asarray(obs, dtype=float))
    seeds = nuisance_seeds(master_seed, n)
    jobs = [(sim, prior, obs, distance, master_seed, i, s, cfg) for i, s in enumerate(seeds)]
    return seeds, _map(_bo_seed, jobs, workers)


def _surrogate_distance(gp, prior: Prior):
    def fn(thetas):
        thetas = np.atleast_2d(thetas)
        out = np.full(len(thetas), np.inf)
        inside = prior.in_support(thetas)
        if inside.any():
            out[inside] = gp.mean(thetas[inside])
        return out

    return fn


def _ellipsoidal_seed(job) -> SeedDraws:
    (sim, prior, obs, distance, master_seed, index, seed, bo, thresholds, m,
     box_cfg, evaluator, loose_box) = job
    dim = sim.param_dim
    if bo is None or bo.gp is None:
        return _skip(index, seed, np.inf, "failed", "Bayesian optimisation produced no usable surrogate", dim)
    if not bo.distance <= thresholds.accept:
        return _skip(index, seed, bo.distance, "excluded", "end distance above epsilon", dim)
    surrogate = _surrogate_distance(bo.gp, prior)
    try:
        curvature = bo.gp.hessian(bo.theta)
        lam, axes = principal_axes(curvature)
        eps_cap = thresholds.loose if box_cfg.curvature_step else None
        eta = direction_steps(axes, lam, box_cfg.eta_fraction * prior_ranges(prior), eps_cap)
        if loose_box == "expand":
            loose = expand_box_alternative(
                surrogate, bo.theta, axes, thresholds.loose, stage_rng(master_seed, index, "region"), 0.01 * eta
            )
        else:
            loose = build_box(surrogate, bo.theta, curvature, thresholds.loose, eta, box_cfg.refinements)
        fit = fit_ellipse(surrogate, loose, thresholds.proposal, stage_rng(master_seed, index, "train"))
        proposal = clip_to_support(
            fit.region, prior.lower, prior.upper, stage_rng(master_seed, index, "volume"), box_cfg.mc_volume_points
        )
    except (RegionDegenerateError, NumericalError) as exc:
        return _skip(index, seed, bo.distance, "degenerate", str(exc), dim)
    if evaluator == "gp":
        dist_fn = surrogate
    else:
        def dist_fn(thetas):
            return batch_distance(sim, thetas, seed, obs, distance, prior)

    kind = "box_fallback" if fit.fallback else "ellipsoid"
    check = AcceptanceCheck(thresholds.accept, evaluator)
    rng = stage_rng(master_seed, index, "sample")
    return _weigh(index, seed, bo.distance, kind, proposal, m, prior, check, dist_fn, sim, rng)


def run_ellipsoidal_romc(
    sim: SeededSimulator,
    prior: Prior,
    obs,
    n: int,
    m: int,
    master_seed: int,
    distance: DistanceFn = euclidean,
    quantiles: QuantileConfig = QuantileConfig(),
    bo: BoConfig = BoConfig(),
    evaluator: Evaluator = "true",
    loose_box: Literal["scan", "expand"] = "scan",
    box: BoxConfig = BoxConfig(),
    bo_results: tuple[np.ndarray, list[BoResult | None]] | None = None,
    thresholds: Thresholds | None = None,
    workers: int = 1,
) -> RomcResult:
    """Ellipsoidal ROMC driven by per-seed GP surrogates.

    Per seed: Bayesian optimisation gives the end point and a GP of the
    distance; the GP Hessian orients a loose box at the loose threshold; a
    quadratic fitted to the GP mean inside it defines an ellipsoid at the
    proposal threshold; draws are accepted at ``epsilon`` by the true
    simulator or by the GP mean (``evaluator="gp"``).

    Parameters
    ----------
    bo_results : (seeds, list of BoResult), optional
        Output of :func:`bayes_opt_seeds` to reuse.
    loose_box : {"scan", "expand"}
        Line-scan box or the expanding-box alternative.
    """
    if evaluator not in ("true", "gp"):
        raise ConfigurationError("evaluator must be 'true' or 'gp'")
    if loose_box not in ("scan", "expand"):
        raise ConfigurationError("loose_box must be 'scan' or 'expand'")
    obs = np.atleast_1d(np.asarray(obs, dtype=float))
    t0 = time.perf_counter()
    fresh = bo_results is None
    if fresh:
        bo_results = bayes_opt_seeds(sim, prior, obs, n, master_seed, distance, bo, workers)
    seeds, results = bo_results
    if len(results) != n:
        raise ConfigurationError("supplied optimisation results do not match n")
    # Every logged evaluation lies inside the support and costs one simulation.
    calls = {"optimisation": sum(len(r.X) for r in results if r is not None) if fresh else 0}
    t1 = time.perf_counter()
    d_star = np.array([np.inf if r is None else r.distance for r in results])
    if thresholds is None:
        thresholds = Thresholds.from_quantiles(d_star, quantiles)
    jobs = [
        (sim, prior, obs, distance, master_seed, i, seeds[i], results[i], thresholds, m, box, evaluator, loose_box)
        for i in range(n)
    ]
    draws = _map(_ellipsoidal_job, jobs, workers)
    timings = {"optimisation": t1 - t0, "regions_and_weights": time.perf_counter() - t1}
    method = "gp_romc" if evaluator == "gp" else "ellipsoidal_romc"
    meta = {"m": m, "n": n, "evaluator": evaluator, "loose_box": loose_box}
    return _assemble(draws, thresholds, method, sim.param_dim, calls, timings, meta)


def rethreshold(result: RomcResult, epsilon: float) -> RomcResult:
    """Re-weight stored draws at a new acceptance threshold without simulating.

    Seeds whose end distance exceeds the new threshold are dropped.

    Raises
    ------
    ConfigurationError
        If ``epsilon`` is not positive or exceeds the proposal threshold,
        beyond which the stored regions may not cover the acceptance regions.
    """
    if not 0 < epsilon <= result.thresholds.proposal:
        raise ConfigurationError("new epsilon must lie in (0, proposal threshold]")
    p = result.posterior
    keep = result.parent_d_star <= epsilon
    indicator = p.distance[keep] <= epsilon
    weight = np.where(indicator, result.prior_density[keep] * result.volume[keep], 0.0)
    posterior = replace(
        p,
        theta=p.theta[keep],
        weight=weight,
        epsilon=float(epsilon),
        seed_index=p.seed_index[keep],
        distance=p.distance[keep],
        indicator=indicator,
        metadata={**p.metadata, "rethresholded_from": p.epsilon},
    )
    thresholds = replace(result.thresholds, accept=float(epsilon))
    calls = {**result.calls, "weighting": 0}
    return replace(
        result,
        posterior=posterior,
        thresholds=thresholds,
        prior_density=result.prior_density[keep],
        volume=result.volume[keep],
        parent_d_star=result.parent_d_star[keep],
        calls=calls,
    )
