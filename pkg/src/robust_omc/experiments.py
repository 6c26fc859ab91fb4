"""Experiment definitions, run orchestration and persistence."""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from .baseline import HeuristicConfig, OmcResult, heuristic_reweight, omc, rejection_abc
from .exceptions import ConfigurationError, RobustOmcError, UndefinedESSError
from .metrics import GridDensity, GridSpec, PosteriorEstimate, jsd, to_grid
from .model import IndependentPrior, Prior, SeededSimulator, UniformPrior, inverse_gamma, make_simulator
from .posteriors import exp1_true_posterior, exp2_true_posterior
from .romc import RomcResult, Thresholds, bayes_opt_seeds, rethreshold, run_boxed_romc, run_ellipsoidal_romc
from .simulators import Exp1Simulator, Exp2Simulator, exp1_region_override
from .storage import atomic_savez, atomic_write_csv, atomic_write_json, read_csv
from .surrogate import BoConfig
from .thresholds import QuantileConfig, select_epsilon

METHODS = ("rejection", "omc", "heuristic_omc", "boxed_romc", "ellipsoidal_romc", "gp_romc")
DEFAULT_BUDGETS = (50, 100, 250, 500)


@dataclass(frozen=True)
class Experiment:
    """Everything needed to run and score one inference problem.

    Attributes
    ----------
    name : str
    make_simulator : callable
        Fresh simulator per run, so call counters start at zero.
    prior : Prior
    observation : ndarray
    grid : GridSpec
    true_posterior : callable, optional
        ``grid -> GridDensity``.
    region_override : callable, optional
        Exact acceptance regions for boxed ROMC.
    assumptions : dict
        Modelling choices reported in every summary.
    """

    name: str
    make_simulator: Callable[[], SeededSimulator]
    prior: Prior
    observation: np.ndarray
    grid: GridSpec
    true_posterior: Callable[[GridSpec], GridDensity] | None = None
    region_override: Callable | None = None
    assumptions: dict = field(default_factory=dict)

    def fingerprint(self) -> dict:
        return {
            "name": self.name,
            "observation": np.asarray(self.observation).tolist(),
            "prior_lower": self.prior.lower.tolist(),
            "prior_upper": self.prior.upper.tolist(),
            "assumptions": self.assumptions,
        }


def exp1_experiment(bound: float = 2.5, analytic_regions: bool = True) -> Experiment:
    prior = UniformPrior([-bound], [bound])
    return Experiment(
        name="exp1",
        make_simulator=Exp1Simulator,
        prior=prior,
        observation=np.array([0.0]),
        grid=GridSpec((-bound,), (bound,), (200,)),
        true_posterior=lambda spec: exp1_true_posterior(spec, 0.0, -bound, bound),
        region_override=exp1_region_override if analytic_regions else None,
        assumptions={
            "prior": f"uniform on [-{bound}, {bound}]",
            "outer_branch": "|theta| - c",
            "analytic_regions": analytic_regions,
        },
    )


def exp2_prior(mu_prior_sd=5.0, sigma_shape=0.2, sigma_scale=1.0, parametrisation="scale") -> IndependentPrior:
    """Gaussian prior on ``mu`` and inverse-gamma prior on ``sigma``, truncated to the grid box."""
    return IndependentPrior(
        [stats.norm(0.0, mu_prior_sd), inverse_gamma(sigma_shape, sigma_scale, parametrisation)],
        lower=[-3.0, 0.0],
        upper=[5.0, 6.0],
    )


def exp2_experiment(parametrisation: str = "scale") -> Experiment:
    prior = exp2_prior(parametrisation=parametrisation)
    return Experiment(
        name="exp2",
        make_simulator=Exp2Simulator,
        prior=prior,
        observation=np.array([1.0]),
        grid=GridSpec((-3.0, 0.0), (5.0, 6.0), (64, 64)),
        true_posterior=lambda spec: exp2_true_posterior(spec, parametrisation=parametrisation),
        assumptions={
            "mu_prior": "normal, mean 0, standard deviation 5",
            "sigma_prior": f"inverse gamma, shape 0.2, {parametrisation} 1",
            "truncation": "[-3, 5] x [0, 6]",
        },
    )


def custom_experiment(spec: dict) -> Experiment:
    """Experiment from a config mapping with a registered simulator and a uniform prior.

    Required keys: ``simulator``, ``prior_lower``, ``prior_upper``,
    ``observation``. Optional: ``simulator_kwargs``, ``grid_bins``.
    """
    try:
        name = spec["simulator"]
        kwargs = dict(spec.get("simulator_kwargs", {}))
        prior = UniformPrior(spec["prior_lower"], spec["prior_upper"])
        obs = np.atleast_1d(np.asarray(spec["observation"], dtype=float))
    except KeyError as exc:
        raise ConfigurationError(f"custom experiment is missing {exc}") from None
    make_simulator(name, **kwargs)
    bins = spec.get("grid_bins", [64] * prior.dim)
    return Experiment(
        name="custom",
        make_simulator=lambda: make_simulator(name, **kwargs),
        prior=prior,
        observation=obs,
        grid=GridSpec(tuple(prior.lower), tuple(prior.upper), tuple(bins)),
        assumptions={"simulator": name, "simulator_kwargs": kwargs},
    )


@dataclass(frozen=True)
class RunManifest:
    """Complete description of one run; equal manifests give equal outputs.

    Attributes
    ----------
    experiment : {"exp1", "exp2", "custom"}
    method : str
        One of :data:`METHODS`.
    n : int
        Nuisance seeds (accepted samples for ``rejection``).
    m : int
        Proposal draws per seed.
    N : int
        Rejection-ABC budget, also used for the reference posterior.
    reference_n : int
        Accepted samples of the reference posterior.
    quantiles : tuple of float
        Acceptance, proposal and loose-box quantiles.
    seed : int
        Master seed.
    reference_seed : int
        Master seed of the reference posterior.
    evaluator : {"true", "gp"}
        Acceptance evaluator of ellipsoidal ROMC.
    out : str
        Output root directory.
    """

    experiment: str = "exp1"
    method: str = "boxed_romc"
    n: int = 100
    m: int = 100
    N: int = 1_000_000
    reference_n: int = 1000
    quantiles: tuple[float, float, float] = (0.9, 0.95, 0.975)
    seed: int = 0
    reference_seed: int = 0
    evaluator: str = "true"
    out: str = "runs"
    drop_fractions: tuple[float, ...] = (0.25, 0.5, 0.75)
    loose_box: str = "scan"
    analytic_regions: bool = True
    bo_iterations: int = 50
    reference: bool = True
    workers: int = 1
    custom: dict | None = None

    def __post_init__(self):
        if self.experiment not in ("exp1", "exp2", "custom"):
            raise ConfigurationError(f"unknown experiment {self.experiment!r}")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.evaluator not in ("true", "gp"):
            raise ConfigurationError("evaluator must be 'true' or 'gp'")
        if self.n < 1 or self.m < 1 or self.N < 1 or self.reference_n < 1:
            raise ConfigurationError("counts must be positive")
        object.__setattr__(self, "quantiles", tuple(QuantileConfig(*self.quantiles).as_list()))
        object.__setattr__(self, "drop_fractions", tuple(float(f) for f in self.drop_fractions))

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown manifest keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("quantiles", "drop_fractions"):
            if key in data and isinstance(data[key], str):
                data[key] = tuple(float(v) for v in data[key].split(","))
            elif key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def content(self) -> dict:
        """Fields that determine the outputs."""
        d = self.to_dict()
        for key in ("out", "workers"):
            d.pop(key)
        return d

    def digest(self) -> str:
        text = json.dumps(self.content(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @property
    def directory(self) -> Path:
        return Path(self.out) / f"{self.experiment}-{self.method}-{self.digest()}"

    def experiment_setup(self) -> Experiment:
        if self.experiment == "exp1":
            return exp1_experiment(analytic_regions=self.analytic_regions)
        if self.experiment == "exp2":
            return exp2_experiment()
        if self.custom is None:
            raise ConfigurationError("custom experiment needs a 'custom' section")
        return custom_experiment(self.custom)


# Reference posteriors ----------------------------------------------------------------


def make_reference(
    setup: Experiment,
    budget: int,
    accept: int,
    seed: int,
    cache_dir: str | Path | None = None,
    simulator: SeededSimulator | None = None,
) -> PosteriorEstimate:
    """Large-budget rejection ABC posterior, cached on disk by content hash.

    A corrupt or unreadable cache file is ignored and recomputed.
    """
    key = hashlib.sha256(
        json.dumps({"setup": setup.fingerprint(), "N": budget, "n": accept, "seed": seed}, sort_keys=True).encode()
    ).hexdigest()[:20]
    path = Path(cache_dir) / f"reference-{key}.npz" if cache_dir is not None else None
    if path is not None and path.exists():
        try:
            with np.load(path) as data:
                theta, dist, idx = data["theta"], data["distance"], data["seed_index"]
            if theta.shape == (accept, setup.prior.dim):
                return PosteriorEstimate(
                    theta, np.ones(accept), "rejection", float(dist.max()), idx, dist, metadata={"cache": "hit"}
                )
        except Exception:  # noqa: BLE001 - any unreadable cache is recomputed
            pass
    sim = simulator if simulator is not None else setup.make_simulator()
    ref = rejection_abc(sim, setup.prior, setup.observation, budget, accept, seed)
    if path is not None:
        atomic_savez(path, theta=ref.theta, distance=ref.distance, seed_index=ref.seed_index)
    ref.metadata["cache"] = "miss"
    return ref


# Running methods -----------------------------------------------------------------------


@dataclass
class MethodRunner:
    """Runs several methods on one experiment, sharing optimisation work.

    OMC, heuristic OMC and boxed ROMC reuse one set of gradient-based end
    points; ellipsoidal and GP ROMC reuse one set of Bayesian-optimisation
    results.
    """

    setup: Experiment
    manifest: RunManifest
    reference_grid: GridDensity | None = None
    sim: SeededSimulator = None
    _omc: OmcResult | None = None
    _bo: tuple | None = None

    def __post_init__(self):
        if self.sim is None:
            self.sim = self.setup.make_simulator()

    @property
    def quantiles(self) -> QuantileConfig:
        return QuantileConfig(*self.manifest.quantiles)

    def omc_result(self) -> OmcResult:
        if self._omc is None:
            mf = self.manifest
            self._omc = omc(
                self.sim, self.setup.prior, self.setup.observation, mf.n, mf.seed,
                quantile=self.quantiles.accept, workers=mf.workers,
            )
        return self._omc

    def bo_results(self):
        if self._bo is None:
            mf = self.manifest
            cfg = BoConfig(iterations=mf.bo_iterations)
            self._bo = bayes_opt_seeds(
                self.sim, self.setup.prior, self.setup.observation, mf.n, mf.seed, cfg=cfg, workers=mf.workers
            )
        return self._bo

    def run(self, method: str) -> tuple[PosteriorEstimate, dict]:
        """Run ``method``; returns the posterior and method-specific details."""
        mf, setup = self.manifest, self.setup
        if method == "rejection":
            post = rejection_abc(self.sim, setup.prior, setup.observation, mf.N, mf.n, mf.seed)
            return post, {}
        if method == "omc":
            res = self.omc_result()
            return res.posterior(), {"omc": res}
        if method == "heuristic_omc":
            return self._best_heuristic()
        if method == "boxed_romc":
            res = run_boxed_romc(
                self.sim, setup.prior, setup.observation, mf.n, mf.m, mf.seed,
                quantiles=self.quantiles, omc_result=self.omc_result(),
                region_override=setup.region_override, workers=mf.workers,
            )
            return res.posterior, {"romc": res}
        evaluator = "gp" if method == "gp_romc" else mf.evaluator
        res = run_ellipsoidal_romc(
            self.sim, setup.prior, setup.observation, mf.n, mf.m, mf.seed,
            quantiles=self.quantiles, evaluator=evaluator, loose_box=mf.loose_box,
            bo_results=self.bo_results(), workers=mf.workers,
        )
        return replace(res.posterior, method=method), {"romc": res}

    def _best_heuristic(self) -> tuple[PosteriorEstimate, dict]:
        """Sweep drop fractions and keep the one closest to the reference (or truth)."""
        res = self.omc_result()
        target = self.reference_grid
        if target is None and self.setup.true_posterior is not None:
            target = self.setup.true_posterior(self.setup.grid)
        best, best_score, sweep = None, np.inf, {}
        for frac in self.manifest.drop_fractions:
            post = heuristic_reweight(res, self.setup.prior, HeuristicConfig("pseudo_determinant", frac))
            score = _safe_jsd(post, target) if target is not None else 0.0
            sweep[str(frac)] = score
            if best is None or score < best_score:
                best, best_score = post, score
                best.metadata["drop_fraction"] = frac
        return best, {"heuristic_sweep": sweep, "omc": res}


def _safe_jsd(post: PosteriorEstimate, target: GridDensity) -> float:
    try:
        return jsd(to_grid(post, target.spec), target)
    except (ConfigurationError, UndefinedESSError):
        return float("nan")


def posterior_scores(post: PosteriorEstimate, grid: GridSpec, reference: GridDensity | None, truth: GridDensity | None) -> dict:
    """ESS and divergences of a posterior against reference and truth."""
    scores: dict = {"n_samples": len(post)}
    try:
        scores["ess"] = post.ess()
        scores["ess_ratio"] = post.ess_ratio()
    except (UndefinedESSError, ConfigurationError):
        scores["ess"] = scores["ess_ratio"] = None
        return scores
    density = to_grid(post, grid)
    scores["out_of_bounds"] = density.out_of_bounds
    for label, target in (("reference", reference), ("truth", truth)):
        if target is None:
            continue
        scores[f"jsd_{label}"] = jsd(density, target)
        if grid.dim > 1:
            scores[f"jsd_{label}_marginals"] = [jsd(density.marginal(a), target.marginal(a)) for a in range(grid.dim)]
    scores["mean"] = post.mean().tolist()
    return scores


@dataclass(frozen=True)
class RunBundle:
    """Outputs of :func:`run_experiment`."""

    manifest: RunManifest
    posterior: PosteriorEstimate
    summary: dict
    directory: Path
    grid: GridDensity | None


def _posterior_rows(post: PosteriorEstimate, details: dict):
    if "romc" in details:
        return list(details["romc"].rows())
    if "omc" in details:
        res: OmcResult = details["omc"]
        weights = dict(zip(post.seed_index.tolist(), post.weight.tolist()))
        rows = []
        for row in res.rows():
            row["weight"] = float(weights.get(row["seed_index"], 0.0))
            rows.append(row)
        return rows
    return [
        {"seed_index": int(i), **{f"theta_{k}": float(v) for k, v in enumerate(t)}, "weight": float(w), "distance": float(d)}
        for i, t, w, d in zip(post.seed_index, post.theta, post.weight, post.distance)
    ]


def run_experiment(manifest: RunManifest, write: bool = True) -> RunBundle:
    """Run one method on one experiment and write its artifacts.

    The run directory holds ``manifest.json``, ``samples.csv``,
    ``summary.json``, ``grid.csv`` and, when known, ``grid_truth.csv``.
    """
    setup = manifest.experiment_setup()
    out_root = Path(manifest.out)
    truth = setup.true_posterior(setup.grid) if setup.true_posterior is not None else None
    reference = None
    if manifest.reference and manifest.method != "rejection":
        ref = make_reference(setup, manifest.N, manifest.reference_n, manifest.reference_seed, out_root / "_cache")
        reference = to_grid(ref, setup.grid)
    runner = MethodRunner(setup, manifest, reference)
    t0 = time.perf_counter()
    post, details = runner.run(manifest.method)
    wall = time.perf_counter() - t0
    summary = {
        "experiment": setup.name,
        "method": manifest.method,
        "manifest_digest": manifest.digest(),
        "epsilon": post.epsilon,
        "assumptions": setup.assumptions,
        "wall_time": wall,
        "simulator_calls": runner.sim.calls,
        **posterior_scores(post, setup.grid, reference, truth),
    }
    if "omc" in details:
        res = details["omc"]
        summary["ill_conditioned"] = int(res.ill_conditioned.sum())
        summary["excluded"] = int(res.excluded.sum())
        summary["d_star"] = res.d_star.tolist()
    if "heuristic_sweep" in details:
        summary["heuristic_sweep"] = details["heuristic_sweep"]
        summary["drop_fraction"] = post.metadata.get("drop_fraction")
    if "romc" in details:
        res: RomcResult = details["romc"]
        summary["thresholds"] = asdict(res.thresholds)
        summary["regions"] = res.region_summary()
        summary["calls_by_stage"] = res.calls
        summary["timings"] = res.timings
        summary["d_star"] = [r.d_star for r in res.reports]
    grid = None
    try:
        grid = to_grid(post, setup.grid)
    except ConfigurationError:
        pass
    directory = manifest.directory
    if write:
        atomic_write_json(directory / "manifest.json", manifest.to_dict())
        atomic_write_csv(directory / "samples.csv", _posterior_rows(post, details))
        atomic_write_json(directory / "summary.json", summary)
        if grid is not None:
            grid.to_csv(directory / "grid.csv")
        if truth is not None:
            truth.to_csv(directory / "grid_truth.csv")
    return RunBundle(manifest, post, summary, directory, grid)


# Comparisons -----------------------------------------------------------------------------


def _compare_cell(job) -> list[dict]:
    manifest, methods, reference = job
    setup = manifest.experiment_setup()
    runner = MethodRunner(setup, manifest, reference)
    rows = []
    for method in methods:
        t0 = time.perf_counter()
        try:
            post, _ = runner.run(method)
            score = jsd(to_grid(post, setup.grid), reference)
            ratio = post.ess_ratio()
            error = ""
        except RobustOmcError as exc:
            score, ratio, error = float("nan"), float("nan"), f"{type(exc).__name__}: {exc}"
        rows.append(
            {
                "method": method,
                "n": manifest.n,
                "seed": manifest.seed,
                "jsd": score,
                "ess_ratio": ratio,
                "wall_time": time.perf_counter() - t0,
                "error": error,
            }
        )
    cell = Path(manifest.out) / "cells" / f"n{manifest.n}-seed{manifest.seed}.csv"
    atomic_write_csv(cell, rows)
    return rows


def compare_methods(
    experiment: str,
    methods: list[str],
    budgets=DEFAULT_BUDGETS,
    replicates: int = 10,
    master_seed: int = 0,
    out: str | Path = "runs",
    workers: int = 1,
    **manifest_options,
) -> list[dict]:
    """Mean and spread of JSD-to-reference for each method and budget.

    Replicate ``r`` uses master seed ``master_seed + r``. Failed cells are
    recorded with their error and the comparison continues. Writes
    ``comparison.csv`` under ``out`` and returns its rows.
    """
    if replicates < 1:
        raise ConfigurationError("replicates must be at least 1")
    for method in methods:
        if method not in METHODS:
            raise ConfigurationError(f"unknown method {method!r}")
    base = RunManifest(experiment=experiment, method=methods[0], out=str(out), **manifest_options)
    setup = base.experiment_setup()
    ref = make_reference(setup, base.N, base.reference_n, base.reference_seed, Path(out) / "_cache")
    reference = to_grid(ref, setup.grid)
    jobs = [
        (replace(base, n=int(b), seed=master_seed + r, workers=1), list(methods), reference)
        for b in budgets
        for r in range(replicates)
    ]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            cells = list(pool.map(_compare_cell, jobs))
    else:
        cells = [_compare_cell(job) for job in jobs]
    raw = [row for cell in cells for row in cell]
    table = []
    for b in budgets:
        stats_by_method = {}
        for method in methods:
            sel = [r for r in raw if r["method"] == method and r["n"] == int(b)]
            vals = np.array([r["jsd"] for r in sel], dtype=float)
            ok = vals[np.isfinite(vals)]
            stats_by_method[method] = {
                "experiment": experiment,
                "method": method,
                "n": int(b),
                "replicates": len(sel),
                "failures": int(np.sum(~np.isfinite(vals))),
                "jsd_mean": float(ok.mean()) if len(ok) else float("nan"),
                "jsd_std": float(ok.std(ddof=1)) if len(ok) > 1 else 0.0,
                "ess_ratio_mean": float(np.nanmean([r["ess_ratio"] for r in sel])) if len(ok) else float("nan"),
                "wall_time_mean": float(np.mean([r["wall_time"] for r in sel])),
            }
        order = sorted(methods, key=lambda k: (np.nan_to_num(stats_by_method[k]["jsd_mean"], nan=np.inf), k))
        for rank, method in enumerate(order, start=1):
            row = stats_by_method[method]
            row["rank"] = rank
            row["ordering"] = " < ".join(order)
            table.append(row)
    atomic_write_csv(Path(out) / "comparison.csv", table)
    atomic_write_csv(Path(out) / "comparison_raw.csv", raw)
    return table


# Re-thresholding stored runs ----------------------------------------------------------


def rethreshold_run(run_dir: str | Path, epsilon: float | None = None, quantile: float | None = None, out=None) -> dict:
    """Re-weight a stored ROMC run at a new threshold without any simulation.

    Exactly one of ``epsilon`` and ``quantile`` (of the stored end
    distances) must be given. Writes ``samples.csv`` and ``summary.json`` to
    ``out`` (default: ``<run_dir>/rethreshold-<epsilon>``).
    """
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text())
    if "thresholds" not in summary:
        raise ConfigurationError("run directory does not hold a ROMC run")
    if (epsilon is None) == (quantile is None):
        raise ConfigurationError("give exactly one of epsilon and quantile")
    if epsilon is None:
        epsilon = select_epsilon(np.array(summary["d_star"], dtype=float), quantile)
    rows = read_csv(run_dir / "samples.csv")
    dim = sum(1 for k in (rows[0] if rows else {}) if k.startswith("theta_"))
    arr = lambda key: np.array([float(r[key]) for r in rows])  # noqa: E731
    thresholds = Thresholds(**summary["thresholds"])
    stored = RomcResult(
        posterior=PosteriorEstimate(
            theta=np.column_stack([arr(f"theta_{k}") for k in range(dim)]) if rows else np.empty((0, 1)),
            weight=arr("weight"),
            method=summary["method"],
            epsilon=thresholds.accept,
            seed_index=arr("parent_seed_index").astype(int),
            distance=arr("distance"),
            indicator=arr("indicator").astype(bool),
        ),
        thresholds=thresholds,
        reports=[],
        prior_density=arr("prior_density"),
        volume=arr("volume"),
        parent_d_star=arr("parent_d_star"),
    )
    new = rethreshold(stored, float(epsilon))
    out = Path(out) if out is not None else run_dir / f"rethreshold-{epsilon:.6g}"
    new_summary = {"source": str(run_dir), "epsilon": float(epsilon), "simulator_calls": 0}
    try:
        new_summary.update(ess=new.posterior.ess(), ess_ratio=new.posterior.ess_ratio())
    except UndefinedESSError:
        new_summary.update(ess=None, ess_ratio=None)
    atomic_write_csv(out / "samples.csv", list(new.rows()))
    atomic_write_json(out / "summary.json", new_summary)
    return new_summary
