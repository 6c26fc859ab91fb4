"""Proposal regions around optimisation end points.

Regions are boxes aligned with the eigenvectors of a curvature matrix,
ellipsoids fitted to a quadratic model of the distance, or exact unions of
intervals in one dimension. All of them support uniform sampling, volume
and containment queries, and can be intersected with a prior's box support
through :func:`clip_to_support`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .exceptions import ConfigurationError, RegionDegenerateError

RegionDistance = Callable[[np.ndarray], np.ndarray]


def unit_ball_volume(dim: int) -> float:
    return float(np.exp(0.5 * dim * np.log(np.pi) - gammaln(0.5 * dim + 1.0)))


def sample_unit_ball(rng: np.random.Generator, m: int, dim: int) -> np.ndarray:
    """Uniform draws from the unit ball via normalised Gaussians."""
    x = rng.standard_normal((m, dim))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    radii = rng.random((m, 1)) ** (1.0 / dim)
    return x / np.where(norms > 0, norms, 1.0) * radii


def principal_axes(curvature: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-pairs sorted by descending eigenvalue with a deterministic sign.

    Each eigenvector is flipped so its largest-magnitude component is positive.
    """
    lam, vec = np.linalg.eigh(0.5 * (curvature + curvature.T))
    order = np.argsort(-lam, kind="stable")
    lam, vec = lam[order], vec[:, order]
    pivot = np.argmax(np.abs(vec), axis=0)
    signs = np.sign(vec[pivot, np.arange(vec.shape[1])])
    return lam, vec * np.where(signs == 0, 1.0, signs)


@dataclass(frozen=True)
class BoxRegion:
    """Box ``center + axes @ o`` with ``lower <= o <= upper`` componentwise.

    Attributes
    ----------
    center : ndarray, shape (d,)
    axes : ndarray, shape (d, d)
        Orthonormal scan directions as columns.
    lower, upper : ndarray, shape (d,)
        Signed extents along each axis; ``lower <= 0 <= upper``.
    fallback : bool
        True when the box stands in for a failed ellipse fit.
    """

    center: np.ndarray
    axes: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    fallback: bool = False

    @classmethod
    def axis_aligned(cls, lower, upper) -> "BoxRegion":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        center = 0.5 * (lower + upper)
        return cls(center, np.eye(len(lower)), lower - center, upper - center)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def half_widths(self) -> tuple[np.ndarray, np.ndarray]:
        return -self.lower, self.upper

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def local(self, thetas) -> np.ndarray:
        return (np.atleast_2d(thetas) - self.center) @ self.axes

    def contains(self, thetas, tol: float = 1e-12) -> np.ndarray:
        o = self.local(thetas)
        slack = tol * np.maximum(1.0, np.abs(self.upper - self.lower))
        return np.all((o >= self.lower - slack) & (o <= self.upper + slack), axis=1)

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        o = self.lower + (self.upper - self.lower) * rng.random((m, self.dim))
        return self.center + o @ self.axes.T

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.center + np.sum(np.minimum(self.axes * self.lower, self.axes * self.upper), axis=1)
        hi = self.center + np.sum(np.maximum(self.axes * self.lower, self.axes * self.upper), axis=1)
        return lo, hi


@dataclass(frozen=True)
class EllipsoidRegion:
    """Ellipsoid ``{theta : (theta - center)^T shape (theta - center) <= level}``.

    Internally stored as the image ``center + transform @ x`` of the unit
    ball, which stays well conditioned for very elongated ellipsoids.
    """

    center: np.ndarray
    shape: np.ndarray
    level: float
    transform: np.ndarray

    @classmethod
    def from_quadratic(cls, center, shape, level: float) -> "EllipsoidRegion":
        shape = np.asarray(shape, dtype=float)
        if level <= 0:
            raise RegionDegenerateError("ellipsoid level must be positive")
        chol = np.linalg.cholesky(0.5 * (shape + shape.T))
        transform = np.sqrt(level) * linalg.solve_triangular(chol, np.eye(len(shape)), lower=True).T
        return cls(np.asarray(center, dtype=float), shape, float(level), transform)

    @classmethod
    def from_transform(cls, center, transform) -> "EllipsoidRegion":
        transform = np.asarray(transform, dtype=float)
        inv = np.linalg.inv(transform)
        return cls(np.asarray(center, dtype=float), inv.T @ inv, 1.0, transform)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        return unit_ball_volume(self.dim) * abs(float(np.linalg.det(self.transform)))

    def contains(self, thetas, tol: float = 1e-12) -> np.ndarray:
        x = np.linalg.solve(self.transform, (np.atleast_2d(thetas) - self.center).T).T
        return np.sum(x * x, axis=1) <= 1.0 + tol

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        return self.center + sample_unit_ball(rng, m, self.dim) @ self.transform.T

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        half = np.linalg.norm(self.transform, axis=1)
        return self.center - half, self.center + half


@dataclass(frozen=True)
class IntervalRegion:
    """Union of disjoint closed intervals on the real line."""

    intervals: np.ndarray

    def __post_init__(self):
        iv = np.asarray(self.intervals, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "intervals", iv[np.argsort(iv[:, 0])])

    @property
    def dim(self) -> int:
        return 1

    @property
    def volume(self) -> float:
        return float(np.sum(self.intervals[:, 1] - self.intervals[:, 0]))

    def contains(self, thetas, tol: float = 1e-12) -> np.ndarray:
        t = np.atleast_2d(thetas)[:, :1]
        lo, hi = self.intervals[:, 0], self.intervals[:, 1]
        return np.any((t >= lo - tol) & (t <= hi + tol), axis=1)

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        lengths = self.intervals[:, 1] - self.intervals[:, 0]
        pick = rng.choice(len(lengths), size=m, p=lengths / lengths.sum())
        u = rng.random(m)
        return (self.intervals[pick, 0] + u * lengths[pick])[:, None]

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.intervals[:1, 0], self.intervals[-1:, 1]

    def clip(self, lower: float, upper: float) -> "IntervalRegion":
        iv = np.clip(self.intervals, lower, upper)
        return IntervalRegion(iv[iv[:, 1] > iv[:, 0]])


Region = BoxRegion | EllipsoidRegion | IntervalRegion


@dataclass(frozen=True)
class Proposal:
    """Uniform proposal on a region intersected with a box support.

    Attributes
    ----------
    region : BoxRegion, EllipsoidRegion or IntervalRegion
    lower, upper : ndarray
        Support box.
    volume : float
        Volume of the intersection.
    clipped : bool
        True when sampling needs rejection against the support and the
        volume is a Monte-Carlo estimate.
    """

    region: Region
    lower: np.ndarray
    upper: np.ndarray
    volume: float
    clipped: bool = False

    @property
    def dim(self) -> int:
        return self.region.dim

    def contains(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        inside = np.all((thetas >= self.lower) & (thetas <= self.upper), axis=1)
        return inside & self.region.contains(thetas)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.region.bounding_box()
        return np.maximum(lo, self.lower), np.minimum(hi, self.upper)

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if not self.clipped:
            return self.region.sample(m, rng)
        out, have = [], 0
        while have < m:
            draw = self.region.sample(max(2 * (m - have), 64), rng)
            draw = draw[np.all((draw >= self.lower) & (draw <= self.upper), axis=1)]
            out.append(draw)
            have += len(draw)
        return np.concatenate(out)[:m]


def _is_signed_permutation(axes: np.ndarray) -> bool:
    a = np.abs(axes)
    return bool(np.all((a < 1e-12) | (np.abs(a - 1) < 1e-12)))


def clip_to_support(region: Region, lower, upper, rng: np.random.Generator, n_mc: int = 10_000) -> Proposal:
    """Intersect a region with the box ``[lower, upper]``.

    Regions inside the support keep their exact volume. Axis-aligned boxes
    and interval unions are intersected analytically; anything else gets a
    Monte-Carlo volume from ``n_mc`` uniform draws.

    Raises
    ------
    RegionDegenerateError
        If the intersection is empty or has zero volume.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    lo, hi = region.bounding_box()
    if np.all(lo >= lower) and np.all(hi <= upper):
        out = Proposal(region, lower, upper, region.volume)
    elif isinstance(region, IntervalRegion):
        clipped = region.clip(lower[0], upper[0])
        if len(clipped.intervals) == 0:
            raise RegionDegenerateError("interval region lies outside the support")
        out = Proposal(clipped, lower, upper, clipped.volume)
    elif isinstance(region, BoxRegion) and _is_signed_permutation(region.axes):
        lo, hi = np.maximum(lo, lower), np.minimum(hi, upper)
        box = BoxRegion(region.center, np.eye(region.dim), lo - region.center, hi - region.center, region.fallback)
        out = Proposal(box, lower, upper, box.volume)
    else:
        pts = region.sample(n_mc, rng)
        frac = np.mean(np.all((pts >= lower) & (pts <= upper), axis=1))
        out = Proposal(region, lower, upper, region.volume * float(frac), clipped=True)
    if not out.volume > 0:
        raise RegionDegenerateError("region has zero volume inside the support")
    return out


def sample_proposal(region: Region | Proposal, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` i.i.d. uniform draws from a region or proposal."""
    if m < 1:
        raise ConfigurationError("m must be positive")
    return region.sample(m, rng)


# Box construction ---------------------------------------------------------------


def _scan(distance: RegionDistance, origin, direction, eps, eta, refinements, max_steps):
    """Extent along ``direction`` bracketing the ``eps`` boundary.

    Returns the last point found inside plus the final halved step, which
    lies within ``eta / 2**refinements`` of the boundary.
    """
    t, step, taken = 0.0, eta, 0
    for _ in range(refinements):
        while True:
            t += step
            taken += 1
            if taken > max_steps:
                raise RegionDegenerateError("line scan did not leave the acceptance region")
            d = float(distance((origin + t * direction)[None, :])[0])
            if not d < eps:
                break
        t -= step
        step *= 0.5
    return t + step


def direction_steps(axes: np.ndarray, eigenvalues: np.ndarray, axis_step, eps: float | None = None) -> np.ndarray:
    """Initial line-scan step per eigen-direction.

    ``axis_step`` (scalar or per coordinate) is projected onto each
    direction. When ``eps`` is given the step is capped at ``eps /
    sqrt(lambda)``, the distance to the boundary of the linearised region,
    so thin regions are not stepped over.
    """
    axis_step = np.broadcast_to(np.asarray(axis_step, dtype=float), (axes.shape[0],))
    steps = np.abs(axes).T @ axis_step
    if eps is not None:
        with np.errstate(divide="ignore"):
            cap = np.where(eigenvalues > 0, eps / np.sqrt(np.clip(eigenvalues, 1e-300, None)), np.inf)
        steps = np.minimum(steps, cap)
    return steps


def build_box(
    distance: RegionDistance,
    theta_star,
    curvature,
    eps_region: float,
    eta,
    refinements: int = 4,
    max_steps: int = 100_000,
) -> BoxRegion:
    """Box spanned by line scans along the eigenvectors of ``curvature``.

    Along every eigenvector, in both directions, the scan advances by the
    current step until the distance reaches ``eps_region``, steps back and
    halves the step, ``refinements`` times; the recorded extent adds the
    final half step so the boundary is bracketed to within ``eta / 2**K``.

    Parameters
    ----------
    distance : callable
        Vectorised distance ``(k, d) -> (k,)``; ``inf`` outside the support.
    theta_star : array_like
        Scan origin; must lie strictly inside the region.
    curvature : array_like, shape (d, d)
    eps_region : float
    eta : float or array_like
        Initial step, scalar or one per eigen-direction.
    refinements : int
        Number of step halvings.

    Raises
    ------
    RegionDegenerateError
        If the origin is not inside the region or a scan never leaves it.
    """
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    if refinements < 1:
        raise ConfigurationError("refinements must be at least 1")
    if not float(distance(theta_star[None, :])[0]) < eps_region:
        raise RegionDegenerateError("end point lies outside the acceptance region")
    _, axes = principal_axes(np.atleast_2d(np.asarray(curvature, dtype=float)))
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (len(theta_star),))
    if np.any(eta <= 0):
        raise ConfigurationError("line-scan step must be positive")
    lower = np.empty(len(theta_star))
    upper = np.empty(len(theta_star))
    for k in range(len(theta_star)):
        v = axes[:, k]
        upper[k] = _scan(distance, theta_star, v, eps_region, eta[k], refinements, max_steps)
        lower[k] = -_scan(distance, theta_star, -v, eps_region, eta[k], refinements, max_steps)
    return BoxRegion(theta_star, axes, lower, upper)


def expand_box_alternative(
    distance: RegionDistance,
    theta_star,
    axes,
    eps: float,
    rng: np.random.Generator,
    initial_half_widths,
    target_reject: float = 0.5,
    growth: float = 1.2,
    batch: int = 200,
    max_doublings: int = 60,
) -> BoxRegion:
    """Grow a tiny box until enough uniform draws fall outside the region.

    Side lengths are multiplied by ``growth`` each step; a fresh batch is
    drawn from the box and the first box whose rejected fraction reaches
    ``target_reject`` is returned.

    Raises
    ------
    RegionDegenerateError
        If the target is not reached within ``max_doublings`` doublings.
    """
    if not 0.0 < target_reject < 1.0:
        raise ConfigurationError("target_reject must lie in (0, 1)")
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    axes = np.asarray(axes, dtype=float)
    half = np.broadcast_to(np.asarray(initial_half_widths, dtype=float), theta_star.shape).copy()
    max_steps = int(np.ceil(max_doublings * np.log(2.0) / np.log(growth)))
    for _ in range(max_steps + 1):
        box = BoxRegion(theta_star, axes, -half, half.copy())
        d = distance(box.sample(batch, rng))
        if np.mean(~(d <= eps)) >= target_reject:
            return box
        half *= growth
    raise RegionDegenerateError("box expansion never reached the rejection target")


# Ellipse fitting ---------------------------------------------------------------


@dataclass(frozen=True)
class EllipseFit:
    """Result of :func:`fit_ellipse`; ``reason`` explains a box fallback."""

    region: EllipsoidRegion | BoxRegion
    fallback: bool
    reason: str | None = None


def quadratic_features(z: np.ndarray) -> np.ndarray:
    """Columns ``z_i z_j`` (i <= j), then ``z``, then a constant."""
    d = z.shape[1]
    iu, ju = np.triu_indices(d)
    return np.column_stack([z[:, iu] * z[:, ju], z, np.ones(len(z))])


def n_quadratic_coefficients(dim: int) -> int:
    return (dim + 1) * (dim + 2) // 2


def _solve_normal_equations(features, targets):
    gram = features.T @ features
    rhs = features.T @ targets
    for ridge in (0.0, 1e-8 * np.trace(gram)):
        try:
            factor = linalg.cho_factor(gram + ridge * np.eye(len(gram)))
        except linalg.LinAlgError:
            continue
        coef = linalg.cho_solve(factor, rhs)
        if np.all(np.isfinite(coef)):
            return coef
    return None


def fit_ellipse(
    surrogate_distance: RegionDistance,
    box: BoxRegion,
    eps_prop: float,
    rng: np.random.Generator,
    n_train: int | None = None,
) -> EllipseFit:
    """Fit a quadratic model of the distance over ``box`` and take its sublevel set.

    The fit happens in box coordinates scaled to ``[-1, 1]`` so very thin
    boxes stay well conditioned. Falls back to ``box`` when the quadratic
    is not positive definite, the sublevel set is empty, or the normal
    equations stay singular after one ridge retry.
    """
    d = box.dim
    n_coef = n_quadratic_coefficients(d)
    if n_train is None:
        n_train = 20 * n_coef
    if n_train < d * (d + 3) // 2 + 1:
        raise ConfigurationError("too few training points to identify a quadratic")
    half = 0.5 * (box.upper - box.lower)
    if not np.all(half > 0):
        raise RegionDegenerateError("cannot fit an ellipse in a flat box")
    mid = 0.5 * (box.upper + box.lower)
    origin = box.center + box.axes @ mid
    scale = box.axes * half

    def fallback(reason):
        return EllipseFit(BoxRegion(box.center, box.axes, box.lower, box.upper, True), True, reason)

    z = rng.uniform(-1.0, 1.0, (n_train, d))
    targets = np.asarray(surrogate_distance(origin + z @ scale.T), dtype=float)
    ok = np.isfinite(targets)
    if ok.sum() < n_coef:
        return fallback("too few finite training targets")
    coef = _solve_normal_equations(quadratic_features(z[ok]), targets[ok])
    if coef is None:
        return fallback("singular normal equations")
    iu, ju = np.triu_indices(d)
    quad = np.zeros((d, d))
    quad[iu, ju] = coef[: len(iu)]
    quad = 0.5 * (quad + quad.T)
    lin = coef[len(iu) : len(iu) + d]
    const = coef[-1]
    try:
        chol = np.linalg.cholesky(quad)
    except np.linalg.LinAlgError:
        return fallback("quadratic model is not positive definite")
    centre_z = -0.5 * linalg.cho_solve((chol, True), lin)
    level = eps_prop - (const + 0.5 * lin @ centre_z)
    if not level > 0:
        return fallback("quadratic model never drops below the threshold")
    unit_map = np.sqrt(level) * linalg.solve_triangular(chol, np.eye(d), lower=True).T
    region = EllipsoidRegion.from_transform(origin + scale @ centre_z, scale @ unit_map)
    return EllipseFit(region, False)
