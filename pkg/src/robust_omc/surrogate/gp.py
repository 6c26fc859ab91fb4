"""Gaussian-process regression with a Matern 5/2 ARD kernel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import pdist

from .. import kernels
from ..exceptions import ConfigurationError, NumericalError

JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


@dataclass(frozen=True)
class Hyperparameters:
    signal_var: float
    lengthscales: np.ndarray
    noise_var: float

    def to_log(self) -> np.ndarray:
        return np.log(np.concatenate([[self.signal_var], self.lengthscales, [self.noise_var]]))

    @classmethod
    def from_log(cls, p: np.ndarray) -> "Hyperparameters":
        e = np.exp(p)
        return cls(float(e[0]), e[1:-1].copy(), float(e[-1]))


def robust_cholesky(K: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter from 1e-10 to 1e-4.

    Jitter is relative to the mean diagonal of ``K``.

    Raises
    ------
    NumericalError
        If the matrix cannot be factorised even with the largest jitter.
    """
    scale = max(float(np.mean(np.diag(K))), 1e-300)
    eye = np.eye(len(K))
    for jitter in JITTERS:
        try:
            return linalg.cholesky(K + jitter * scale * eye, lower=True)
        except linalg.LinAlgError:
            continue
    raise NumericalError("Gram matrix is not positive definite even with jitter")


@dataclass(frozen=True)
class GpSurrogate:
    """Fitted GP with a constant mean and cached Cholesky factor.

    Attributes
    ----------
    X : ndarray, shape (n, d)
    y : ndarray, shape (n,)
    hyper : Hyperparameters
    mean_const : float
    chol : ndarray
        Lower Cholesky factor of ``K + noise * I``.
    alpha : ndarray
        ``(K + noise * I)^{-1} (y - mean_const)``.
    """

    X: np.ndarray
    y: np.ndarray
    hyper: Hyperparameters
    mean_const: float
    chol: np.ndarray
    alpha: np.ndarray

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def predict(self, thetas) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent variance (clamped at zero) at each row."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        h = self.hyper
        k_star = kernels.matern52_cov(thetas, self.X, h.lengthscales, h.signal_var)
        mean = self.mean_const + k_star @ self.alpha
        v = linalg.solve_triangular(self.chol, k_star.T, lower=True)
        var = h.signal_var - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)

    def mean(self, thetas) -> np.ndarray:
        """Posterior mean only."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        h = self.hyper
        return self.mean_const + kernels.matern52_cov(thetas, self.X, h.lengthscales, h.signal_var) @ self.alpha

    def predict_with_gradient(self, theta):
        """Mean, variance and their gradients at a single point."""
        theta = np.asarray(theta, dtype=float)
        h = self.hyper
        k = kernels.matern52_cov(theta[None, :], self.X, h.lengthscales, h.signal_var)[0]
        dk = kernels.matern52_grad(theta, self.X, h.lengthscales, h.signal_var)
        v = linalg.solve_triangular(self.chol, k, lower=True)
        w = linalg.solve_triangular(self.chol, v, lower=True, trans="T")
        mean = self.mean_const + k @ self.alpha
        var = h.signal_var - v @ v
        return mean, max(var, 0.0), dk.T @ self.alpha, -2.0 * dk.T @ w

    def hessian(self, theta, symmetrise: bool = True) -> np.ndarray:
        """Analytic Hessian of the posterior mean at ``theta``."""
        h = self.hyper
        hess = kernels.matern52_mean_hessian(
            np.asarray(theta, dtype=float), self.X, self.alpha, h.lengthscales, h.signal_var
        )
        return 0.5 * (hess + hess.T) if symmetrise else hess


def default_hyperparameters(X: np.ndarray, y: np.ndarray) -> Hyperparameters:
    """Rule-of-thumb hyperparameters from the data ranges."""
    span = np.ptp(X, axis=0)
    span = np.where(span > 0, span, 1.0)
    var = float(np.var(y))
    var = var if var > 0 else 1.0
    return Hyperparameters(var, 0.2 * span, 1e-6 * var)


def _neg_log_marginal(logp, X, yc):
    h = Hyperparameters.from_log(logp)
    n = len(yc)
    K = kernels.matern52_cov(X, X, h.lengthscales, h.signal_var)
    try:
        L = linalg.cholesky(K + h.noise_var * np.eye(n), lower=True)
    except linalg.LinAlgError:
        return 1e25, np.zeros_like(logp)
    alpha = linalg.cho_solve((L, True), yc)
    nll = 0.5 * yc @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * np.log(2 * np.pi)
    inner = np.outer(alpha, alpha) - linalg.cho_solve((L, True), np.eye(n))
    grads = [K] + list(kernels.matern52_lengthscale_grads(X, h.lengthscales, h.signal_var))
    grads.append(h.noise_var * np.eye(n))
    g = np.array([-0.5 * np.sum(inner * dK) for dK in grads])
    return float(nll), g


#: Bounds on the noise variance relative to the target variance. Distances
#: at a fixed seed are deterministic, so only a nugget is allowed.
NOISE_BOUNDS = (1e-12, 1e-8)


def optimise_hyperparameters(X, y, rng: np.random.Generator, restarts: int = 3) -> Hyperparameters:
    """Maximise the log marginal likelihood with multi-start L-BFGS-B."""
    base = default_hyperparameters(X, y)
    var = base.signal_var
    span = base.lengthscales / 0.2
    bounds = (
        [(np.log(1e-4 * var), np.log(1e4 * var))]
        + [(np.log(1e-3 * s), np.log(1e2 * s)) for s in span]
        + [(np.log(NOISE_BOUNDS[0] * var), np.log(NOISE_BOUNDS[1] * var))]
    )
    lo, hi = np.array(bounds).T
    starts = [np.clip(base.to_log(), lo, hi)]
    starts += [lo + (hi - lo) * rng.random(len(lo)) for _ in range(restarts - 1)]
    yc = y - y.mean()
    best = None
    for x0 in starts:
        res = optimize.minimize(_neg_log_marginal, x0, args=(X, yc), jac=True, method="L-BFGS-B", bounds=bounds)
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    return base if best is None else Hyperparameters.from_log(best.x)


def gp_fit(
    X,
    y,
    hyper_opt: bool = True,
    rng: np.random.Generator | None = None,
    hyperparameters: Hyperparameters | None = None,
    restarts: int = 3,
) -> GpSurrogate:
    """Fit a GP to distance values.

    Parameters
    ----------
    X : array_like, shape (n, d)
    y : array_like, shape (n,)
    hyper_opt : bool
        Optimise hyperparameters by maximum marginal likelihood; otherwise
        use ``hyperparameters`` or rule-of-thumb values.
    rng : Generator, optional
        Source of the random restarts.

    Raises
    ------
    ConfigurationError
        Fewer than two points or duplicated inputs.
    NumericalError
        The Gram matrix cannot be factorised.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(X) < 2 or len(X) != len(y):
        raise ConfigurationError("need at least two training points with matching targets")
    if np.min(pdist(X)) < 1e-10:
        raise ConfigurationError("training inputs contain near-duplicates")
    if hyper_opt:
        hyper = optimise_hyperparameters(X, y, rng if rng is not None else np.random.default_rng(0), restarts)
    else:
        hyper = hyperparameters if hyperparameters is not None else default_hyperparameters(X, y)
    mean_const = float(np.mean(y))
    K = kernels.matern52_cov(X, X, hyper.lengthscales, hyper.signal_var)
    L = robust_cholesky(K + hyper.noise_var * np.eye(len(X)))
    alpha = linalg.cho_solve((L, True), y - mean_const)
    return GpSurrogate(X, y, hyper, mean_const, L, alpha)


def gp_predict(g: GpSurrogate, thetas):
    return g.predict(thetas)


def gp_hessian(g: GpSurrogate, theta) -> np.ndarray:
    return g.hessian(theta)
