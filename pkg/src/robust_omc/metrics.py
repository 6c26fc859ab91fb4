"""Effective sample size, weighted posteriors, gridded densities and JSD."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .exceptions import ConfigurationError, UndefinedESSError


def ess(weights) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2``.

    Parameters
    ----------
    weights : array_like
        Nonnegative finite weights.

    Raises
    ------
    UndefinedESSError
        If every weight is zero.

    Examples
    --------
    >>> round(ess([1, 2, 3]), 6)
    2.571429
    """
    w = np.asarray(weights, dtype=float).ravel()
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise ConfigurationError("weights must be finite and nonnegative")
    total = w.sum()
    if total == 0:
        raise UndefinedESSError("all weights are zero")
    # Rescaling first keeps huge or tiny weights from overflowing.
    w = w / w.max()
    return float(w.sum() ** 2 / np.sum(w * w))


@dataclass(frozen=True)
class WeightedSample:
    """One posterior atom from rejection ABC or OMC."""

    theta: np.ndarray
    weight: float
    source_seed: int
    distance_at_sample: float


@dataclass(frozen=True)
class RomcSample:
    """One importance-weighted draw from a ROMC proposal region."""

    theta: np.ndarray
    weight: float
    indicator_passed: bool
    parent_seed_index: int


@dataclass(frozen=True)
class PosteriorEstimate:
    """Weighted-sample posterior approximation.

    Weights may contain ``inf`` for OMC atoms whose curvature matrix is
    singular. Such atoms carry a ``degeneracy`` count (number of vanishing
    curvature eigenvalues) and a finite ``leading`` coefficient; in the
    normalised posterior only atoms of maximal degeneracy survive, with
    relative weights given by ``leading``.

    Attributes
    ----------
    theta : ndarray, shape (N, d)
    weight : ndarray, shape (N,)
    method : str
    epsilon : float or None
        Acceptance threshold used by the method, if any.
    seed_index : ndarray of int, shape (N,)
        Index of the nuisance seed (or prior draw) that produced each atom.
    distance : ndarray, shape (N,)
    indicator : ndarray of bool, optional
        Acceptance indicator of ROMC draws.
    degeneracy, leading : ndarray, optional
        Singular-weight bookkeeping described above.
    metadata : dict
    """

    theta: np.ndarray
    weight: np.ndarray
    method: str = ""
    epsilon: float | None = None
    seed_index: np.ndarray | None = None
    distance: np.ndarray | None = None
    indicator: np.ndarray | None = None
    degeneracy: np.ndarray | None = None
    leading: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim == 1:
            theta = theta[:, None]
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "weight", np.asarray(self.weight, dtype=float).ravel())
        if len(self.weight) != len(theta):
            raise ConfigurationError("one weight per sample is required")
        if np.any(self.weight < 0) or np.any(np.isnan(self.weight)):
            raise ConfigurationError("weights must be nonnegative")
        if self.seed_index is None:
            object.__setattr__(self, "seed_index", np.arange(len(theta)))

    def __len__(self) -> int:
        return len(self.weight)

    @property
    def dim(self) -> int:
        return self.theta.shape[1]

    @property
    def is_empty(self) -> bool:
        return len(self) == 0 or not np.any(self.weight > 0)

    def effective_weights(self) -> np.ndarray:
        """Finite weights proportional to the normalised posterior."""
        singular = np.isinf(self.weight)
        if not singular.any():
            return self.weight
        if self.degeneracy is None or self.leading is None:
            raise ConfigurationError("infinite weights need degeneracy bookkeeping")
        positive = self.weight > 0
        order = self.degeneracy[positive].max()
        keep = positive & (self.degeneracy == order)
        return np.where(keep, self.leading, 0.0)

    @property
    def normalisation(self) -> float:
        return float(self.effective_weights().sum())

    def normalised_weights(self) -> np.ndarray:
        w = self.effective_weights()
        total = w.sum()
        if total <= 0:
            raise UndefinedESSError("posterior has no positive weight")
        return w / total

    def ess(self) -> float:
        return ess(self.effective_weights())

    def ess_ratio(self) -> float:
        """ESS divided by the number of atoms that could carry weight."""
        return self.ess() / len(self)

    def mean(self) -> np.ndarray:
        return self.normalised_weights() @ self.theta

    def std(self) -> np.ndarray:
        w = self.normalised_weights()
        mu = w @ self.theta
        return np.sqrt(w @ (self.theta - mu) ** 2)

    @property
    def samples(self) -> list[WeightedSample | RomcSample]:
        """Per-atom view as :class:`WeightedSample` or :class:`RomcSample`."""
        if self.indicator is not None:
            return [
                RomcSample(t, float(w), bool(i), int(s))
                for t, w, i, s in zip(self.theta, self.weight, self.indicator, self.seed_index)
            ]
        dist = self.distance if self.distance is not None else np.full(len(self), np.nan)
        return [
            WeightedSample(t, float(w), int(s), float(d))
            for t, w, s, d in zip(self.theta, self.weight, self.seed_index, dist)
        ]


# Grids -------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Regular grid over a box: per-dimension bounds and bin counts."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    bins: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        bins = tuple(int(b) for b in np.atleast_1d(self.bins))
        if not (len(lower) == len(upper) == len(bins)):
            raise ConfigurationError("grid bounds and bins must have equal length")
        if not all(np.isfinite(lower + upper)) or any(lo >= hi for lo, hi in zip(lower, upper)):
            raise ConfigurationError("grid bounds must be finite with lower < upper")
        if any(b < 1 for b in bins):
            raise ConfigurationError("bin counts must be positive")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "bins", bins)

    @property
    def dim(self) -> int:
        return len(self.bins)

    def edges(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, b + 1) for lo, hi, b in zip(self.lower, self.upper, self.bins)]

    def centers(self) -> list[np.ndarray]:
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges()]

    def widths(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.bins)

    def marginal(self, axis: int) -> "GridSpec":
        return GridSpec((self.lower[axis],), (self.upper[axis],), (self.bins[axis],))


@dataclass(frozen=True)
class GridDensity:
    """Normalised probability mass on a :class:`GridSpec`.

    Attributes
    ----------
    spec : GridSpec
    mass : ndarray with shape ``spec.bins``, summing to one
    out_of_bounds : float
        Fraction of the source weight that fell outside the grid.
    """

    spec: GridSpec
    mass: np.ndarray
    out_of_bounds: float = 0.0

    def marginal(self, axis: int) -> "GridDensity":
        other = tuple(a for a in range(self.spec.dim) if a != axis)
        return GridDensity(self.spec.marginal(axis), self.mass.sum(axis=other), self.out_of_bounds)

    def to_csv(self, path) -> None:
        """Write bin centers and mass, one row per bin."""
        centers = np.meshgrid(*self.spec.centers(), indexing="ij")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"theta_{k}" for k in range(self.spec.dim)] + ["mass"])
            for row in zip(*(c.ravel() for c in centers), self.mass.ravel()):
                writer.writerow([repr(float(v)) for v in row])


def to_grid(
    posterior: PosteriorEstimate | tuple[np.ndarray, np.ndarray],
    spec: GridSpec,
    smooth: bool = False,
) -> GridDensity:
    """Weighted histogram of a posterior on a grid.

    Parameters
    ----------
    posterior : PosteriorEstimate or (theta, weights)
    spec : GridSpec
    smooth : bool
        Apply a boxcar filter spanning one neighbouring bin on each side.

    Raises
    ------
    ConfigurationError
        If no weight falls inside the grid.
    """
    if isinstance(posterior, PosteriorEstimate):
        theta, w = posterior.theta, posterior.effective_weights()
    else:
        theta, w = posterior
        theta = np.asarray(theta, dtype=float)
        w = np.asarray(w, dtype=float)
    theta = theta.reshape(len(theta), -1)
    if theta.shape[1] != spec.dim:
        raise ConfigurationError("sample dimension does not match the grid")
    total = w.sum()
    if total <= 0:
        raise ConfigurationError("posterior carries no weight")
    inside = np.all((theta >= spec.lower) & (theta <= spec.upper), axis=1)
    hist, _ = np.histogramdd(theta[inside], bins=spec.edges(), weights=w[inside])
    in_mass = hist.sum()
    if in_mass <= 0:
        raise ConfigurationError("no posterior mass inside the grid bounds")
    out_of_bounds = 1.0 - in_mass / total
    if smooth:
        hist = ndimage.uniform_filter(hist, size=3, mode="constant")
    return GridDensity(spec, hist / hist.sum(), float(max(out_of_bounds, 0.0)))


def _kl_to_mixture(p: np.ndarray, m: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / m[nz])))


def jsd(a: GridDensity, b: GridDensity) -> float:
    """Jensen-Shannon divergence in nats, bounded by ``ln 2``.

    Raises
    ------
    ConfigurationError
        If the two densities live on different grids.
    """
    if a.spec != b.spec:
        raise ConfigurationError("densities are defined on different grids")
    p, q = a.mass.ravel(), b.mass.ravel()
    m = 0.5 * (p + q)
    value = 0.5 * _kl_to_mixture(p, m) + 0.5 * _kl_to_mixture(q, m)
    return float(min(max(value, 0.0), np.log(2.0)))


def marginal_jsd(a: GridDensity, b: GridDensity, axis: int) -> float:
    return jsd(a.marginal(axis), b.marginal(axis))


def density_on_grid(log_density, spec: GridSpec, subdivisions: int = 4) -> GridDensity:
    """Integrate an unnormalised log-density over every grid cell.

    Each cell is averaged over ``subdivisions`` midpoint nodes per axis so
    the result is comparable with weighted histograms.
    """
    fine = []
    for lo, hi, b in zip(spec.lower, spec.upper, spec.bins):
        n = b * subdivisions
        fine.append(lo + (np.arange(n) + 0.5) * (hi - lo) / n)
    mesh = np.meshgrid(*fine, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    logp = np.asarray(log_density(pts), dtype=float).reshape(mesh[0].shape)
    finite = np.isfinite(logp)
    if not finite.any():
        raise ConfigurationError("density vanishes on the whole grid")
    dens = np.where(finite, np.exp(logp - logp[finite].max()), 0.0)
    shape = []
    for b in spec.bins:
        shape += [b, subdivisions]
    mass = dens.reshape(shape).sum(axis=tuple(range(1, 2 * spec.dim, 2)))
    return GridDensity(spec, mass / mass.sum())
