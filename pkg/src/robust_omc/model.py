"""Simulators with controlled nuisance seeds, priors and distances.

Every sampler in the package consumes the abstractions defined here. A
simulator is a deterministic map ``(theta, seed) -> summary`` once the seed
is fixed; the seed expands into as many standard random draws as the
simulator needs through a counter-based generator, so the same seed always
reproduces the same nuisance realisation.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .exceptions import ConfigurationError, NumericalError

DistanceFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

#: Stage tags mixed into per-seed random streams.
STAGES = {
    "nuisance": 0,
    "optimise": 1,
    "region": 2,
    "sample": 3,
    "volume": 4,
    "train": 5,
    "bayesopt": 6,
    "reference": 7,
}


def nuisance_rng(seed: int) -> np.random.Generator:
    """Return the counter-based generator that realises nuisance seed ``seed``."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


def stage_rng(master_seed: int, seed_index: int, stage: str) -> np.random.Generator:
    """Independent random stream for one stage of one per-seed pipeline.

    Streams depend only on ``(master_seed, seed_index, stage)``, so results
    are identical whatever order or parallelism the pipelines run with.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(seed_index), STAGES[stage]))
    return np.random.Generator(np.random.Philox(ss))


def nuisance_seeds(master_seed: int, n: int) -> np.ndarray:
    """Draw ``n`` 64-bit nuisance seeds from a master seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(STAGES["nuisance"],))
    return ss.generate_state(n, dtype=np.uint64)


def euclidean(y: np.ndarray, y0: np.ndarray) -> np.ndarray:
    """Euclidean distance between summaries along the last axis."""
    return np.linalg.norm(np.asarray(y, dtype=float) - np.asarray(y0, dtype=float), axis=-1)


class SeededSimulator:
    """Base class for simulators whose randomness is controlled by a seed.

    Subclasses implement :meth:`draw_nuisance` and a vectorised
    :meth:`evaluate`; they may also provide :meth:`evaluate_jacobian`.

    Attributes
    ----------
    param_dim, summary_dim : int
        Dimensions of the parameter and summary vectors.
    calls : int
        Number of parameter vectors simulated so far. Diagnostic only.
    """

    param_dim: int = 1
    summary_dim: int = 1
    has_jacobian: bool = False

    def __init__(self):
        self.calls = 0
        self._nuisance_cache: dict[int, np.ndarray] = {}

    # Subclass hooks ------------------------------------------------------

    def draw_nuisance(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw nuisance variables; leading axis of length ``size`` when given."""
        raise NotImplementedError

    def evaluate(self, thetas: np.ndarray, nuisance: np.ndarray) -> np.ndarray:
        """Map ``(k, param_dim)`` parameters to ``(k, summary_dim)`` summaries.

        ``nuisance`` is either a single realisation shared by all rows or a
        stack with one realisation per row.
        """
        raise NotImplementedError

    def evaluate_jacobian(self, thetas: np.ndarray, nuisance: np.ndarray) -> np.ndarray:
        """Analytic Jacobians, shape ``(k, summary_dim, param_dim)``."""
        raise NotImplementedError

    # Public API -----------------------------------------------------------

    def nuisance(self, seed: int) -> np.ndarray:
        """Nuisance realisation for ``seed`` (cached)."""
        seed = int(seed)
        u = self._nuisance_cache.get(seed)
        if u is None:
            u = self.draw_nuisance(nuisance_rng(seed))
            self._nuisance_cache[seed] = u
        return u

    def simulate_batch(self, thetas: np.ndarray, seed: int) -> np.ndarray:
        """Simulate many parameter vectors under one fixed seed."""
        thetas = self._check_thetas(thetas)
        self.calls += len(thetas)
        return np.asarray(self.evaluate(thetas, self.nuisance(seed)), dtype=float)

    def simulate(self, theta: np.ndarray, seed: int) -> np.ndarray:
        """Simulate one parameter vector under a fixed seed."""
        return self.simulate_batch(np.atleast_1d(theta)[None, :], seed)[0]

    def simulate_fresh(self, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Simulate each row with its own fresh nuisance draw from ``rng``."""
        thetas = self._check_thetas(thetas)
        self.calls += len(thetas)
        nuisance = self.draw_nuisance(rng, size=len(thetas))
        return np.asarray(self.evaluate(thetas, nuisance), dtype=float)

    def _check_thetas(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[1] != self.param_dim:
            raise ConfigurationError(
                f"expected parameters of dimension {self.param_dim}, got {thetas.shape[1]}"
            )
        return thetas


class FunctionSimulator(SeededSimulator):
    """Wrap a plain function ``fn(theta, nuisance) -> summary``.

    Parameters
    ----------
    fn : callable
        Per-parameter simulator taking a 1-D ``theta`` and one nuisance
        realisation.
    param_dim, summary_dim : int
        Dimensions of parameters and summaries.
    nuisance_shape : tuple of int
        Shape of one nuisance realisation (standard normal draws).
    jacobian : callable, optional
        ``jacobian(theta, nuisance) -> (summary_dim, param_dim)`` array.
    """

    def __init__(
        self,
        fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
        param_dim: int,
        summary_dim: int,
        nuisance_shape: tuple[int, ...] = (),
        jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    ):
        super().__init__()
        self.fn = fn
        self.param_dim = param_dim
        self.summary_dim = summary_dim
        self.nuisance_shape = tuple(nuisance_shape)
        self._jacobian = jacobian
        self.has_jacobian = jacobian is not None

    def draw_nuisance(self, rng, size=None):
        shape = self.nuisance_shape if size is None else (size, *self.nuisance_shape)
        return rng.standard_normal(shape)

    def _per_row(self, nuisance, k):
        shared = np.shape(nuisance) == self.nuisance_shape
        return (lambda i: nuisance) if shared else (lambda i: nuisance[i])

    def evaluate(self, thetas, nuisance):
        pick = self._per_row(nuisance, len(thetas))
        out = [np.atleast_1d(self.fn(t, pick(i))) for i, t in enumerate(thetas)]
        return np.reshape(out, (len(thetas), self.summary_dim))

    def evaluate_jacobian(self, thetas, nuisance):
        if self._jacobian is None:
            raise NotImplementedError
        pick = self._per_row(nuisance, len(thetas))
        out = [self._jacobian(t, pick(i)) for i, t in enumerate(thetas)]
        return np.reshape(out, (len(thetas), self.summary_dim, self.param_dim))


class LinearGaussianSimulator(SeededSimulator):
    """Linear simulator ``f(theta, u) = A theta + u`` with Gaussian nuisance.

    Parameters
    ----------
    matrix : array_like, shape (summary_dim, param_dim)
        The linear map ``A``.
    noise_scale : float
        Standard deviation of the additive nuisance.
    """

    has_jacobian = True

    def __init__(self, matrix, noise_scale: float = 1.0):
        super().__init__()
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.summary_dim, self.param_dim = self.matrix.shape
        self.noise_scale = float(noise_scale)

    def draw_nuisance(self, rng, size=None):
        shape = (self.summary_dim,) if size is None else (size, self.summary_dim)
        return self.noise_scale * rng.standard_normal(shape)

    def evaluate(self, thetas, nuisance):
        return thetas @ self.matrix.T + nuisance

    def evaluate_jacobian(self, thetas, nuisance):
        return np.broadcast_to(self.matrix, (len(thetas), *self.matrix.shape)).copy()


# Registry -----------------------------------------------------------------

_REGISTRY: dict[str, Callable[..., SeededSimulator]] = {}


def register_simulator(name: str, factory: Callable[..., SeededSimulator]) -> None:
    """Make a simulator factory selectable by name."""
    _REGISTRY[name] = factory


def make_simulator(name: str, **kwargs) -> SeededSimulator:
    """Instantiate a registered simulator."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown simulator {name!r}; registered: {sorted(_REGISTRY)}"
        ) from None
    return factory(**kwargs)


def registered_simulators() -> list[str]:
    return sorted(_REGISTRY)


register_simulator("linear_gaussian", LinearGaussianSimulator)


# Priors --------------------------------------------------------------------


class Prior:
    """Prior with a box-shaped support.

    Subclasses implement :meth:`_density_inside` and :meth:`sample`.
    """

    def __init__(self, lower: Sequence[float], upper: Sequence[float]):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if self.lower.shape != self.upper.shape or np.any(self.lower > self.upper):
            raise ConfigurationError("prior bounds must satisfy lower <= upper")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def in_support(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        return np.all((thetas >= self.lower) & (thetas <= self.upper), axis=1)

    def pdf(self, thetas) -> np.ndarray:
        """Density at each row of ``thetas``; zero outside the support."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        inside = self.in_support(thetas)
        out = np.zeros(len(thetas))
        if inside.any():
            out[inside] = self._density_inside(thetas[inside])
        return out

    def _density_inside(self, thetas: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError


class UniformPrior(Prior):
    """Uniform prior on an axis-aligned box. Zero-width axes are point masses."""

    def _density_inside(self, thetas):
        widths = self.upper - self.lower
        widths = np.where(widths > 0, widths, 1.0)
        return np.full(len(thetas), 1.0 / np.prod(widths))

    def sample(self, rng, size):
        return self.lower + (self.upper - self.lower) * rng.random((size, self.dim))


class IndependentPrior(Prior):
    """Product of univariate distributions truncated to a box.

    Parameters
    ----------
    marginals : sequence of frozen ``scipy.stats`` distributions
    lower, upper : sequence of float
        Truncation bounds; the density is renormalised to the box.
    """

    def __init__(self, marginals, lower, upper):
        super().__init__(lower, upper)
        self.marginals = list(marginals)
        if len(self.marginals) != self.dim:
            raise ConfigurationError("one marginal per dimension is required")
        self._cdf_lo = np.array([d.cdf(lo) for d, lo in zip(self.marginals, self.lower)])
        self._cdf_hi = np.array([d.cdf(hi) for d, hi in zip(self.marginals, self.upper)])
        self._mass = self._cdf_hi - self._cdf_lo
        if np.any(self._mass <= 0):
            raise ConfigurationError("truncation box carries no prior mass")

    def _density_inside(self, thetas):
        dens = np.ones(len(thetas))
        for k, dist in enumerate(self.marginals):
            dens *= dist.pdf(thetas[:, k]) / self._mass[k]
        return dens

    def sample(self, rng, size):
        # Inverse-CDF sampling restricted to the truncation box.
        q = self._cdf_lo + self._mass * rng.random((size, self.dim))
        return np.column_stack([d.ppf(q[:, k]) for k, d in enumerate(self.marginals)])


def inverse_gamma(shape: float, scale: float, parametrisation: str = "scale"):
    """Frozen inverse-gamma distribution; ``parametrisation='rate'`` inverts ``scale``."""
    if parametrisation == "rate":
        scale = 1.0 / scale
    elif parametrisation != "scale":
        raise ConfigurationError("parametrisation must be 'scale' or 'rate'")
    return stats.invgamma(a=shape, scale=scale)


# Distances and Jacobians ----------------------------------------------------


def simulate_distance(
    sim: SeededSimulator,
    theta,
    seed: int,
    obs,
    distance: DistanceFn = euclidean,
    prior: Prior | None = None,
) -> float:
    """Distance between the simulated summary at ``(theta, seed)`` and ``obs``.

    Returns ``inf`` when ``prior`` is given and ``theta`` lies outside its
    support, so optimisers and line scans retreat instead of failing.
    """
    return float(batch_distance(sim, np.atleast_1d(theta)[None, :], seed, obs, distance, prior)[0])


def batch_distance(sim, thetas, seed, obs, distance=euclidean, prior=None) -> np.ndarray:
    """Vectorised :func:`simulate_distance` over the rows of ``thetas``."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    obs = np.atleast_1d(np.asarray(obs, dtype=float))
    if obs.shape != (sim.summary_dim,):
        raise ConfigurationError(
            f"observation has shape {obs.shape}, simulator summary dimension is {sim.summary_dim}"
        )
    out = np.full(len(thetas), np.inf)
    ok = np.ones(len(thetas), dtype=bool) if prior is None else prior.in_support(thetas)
    if ok.any():
        y = sim.simulate_batch(thetas[ok], seed)
        d = np.asarray(distance(y, obs), dtype=float)
        out[ok] = np.where(np.isfinite(d), d, np.inf)
    return out


def fd_steps(theta: np.ndarray) -> np.ndarray:
    """Central-difference step per coordinate."""
    return 1e-5 * np.maximum(1.0, np.abs(theta))


def jacobian(sim: SeededSimulator, theta, seed: int) -> np.ndarray:
    """Jacobian of the simulator at ``(theta, seed)``, shape ``(summary_dim, param_dim)``.

    Uses the analytic Jacobian when the simulator provides one, otherwise
    central finite differences.

    Raises
    ------
    NumericalError
        If the simulator output is non-finite at any probe point.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if sim.has_jacobian:
        jac = sim.evaluate_jacobian(theta[None, :], sim.nuisance(seed))[0]
    else:
        h = fd_steps(theta)
        probes = np.concatenate([theta + np.diag(h), theta - np.diag(h)])
        y = sim.simulate_batch(probes, seed)
        k = len(theta)
        jac = ((y[:k] - y[k:]) / (2 * h[:, None])).T
    jac = np.asarray(jac, dtype=float).reshape(sim.summary_dim, sim.param_dim)
    if not np.all(np.isfinite(jac)):
        raise NumericalError(f"non-finite Jacobian at theta={theta}", theta=theta)
    return jac
