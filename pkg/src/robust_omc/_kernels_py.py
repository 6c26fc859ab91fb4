"""Pure numpy Matern 5/2 kernels, used when the compiled extension is absent."""

import numpy as np

SQRT5 = np.sqrt(5.0)


def _scaled_diffs(X1, X2, lengthscales):
    return (X1[:, None, :] - X2[None, :, :]) / lengthscales


def matern52_cov(X1, X2, lengthscales, signal_var):
    r = np.sqrt(np.sum(_scaled_diffs(X1, X2, lengthscales) ** 2, axis=-1))
    return signal_var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


def matern52_grad(x, X, lengthscales, signal_var):
    """Gradient of ``k(x, X_i)`` with respect to ``x``, shape ``(n, d)``."""
    delta = x[None, :] - X
    r = np.sqrt(np.sum((delta / lengthscales) ** 2, axis=1))
    g = -5.0 / 3.0 * signal_var * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)
    return g[:, None] * delta / lengthscales**2


def matern52_mean_hessian(x, X, alpha, lengthscales, signal_var):
    """Hessian of ``sum_i alpha_i k(x, X_i)`` with respect to ``x``."""
    delta = (x[None, :] - X) / lengthscales**2
    r = np.sqrt(np.sum((x[None, :] - X) ** 2 / lengthscales**2, axis=1))
    e = np.exp(-SQRT5 * r)
    g = -5.0 / 3.0 * signal_var * (1.0 + SQRT5 * r) * e
    c = 25.0 / 3.0 * signal_var * e
    hess = np.diag(np.sum(alpha * g) / lengthscales**2)
    hess += (delta * (alpha * c)[:, None]).T @ delta
    return hess


def matern52_lengthscale_grads(X, lengthscales, signal_var):
    """Derivatives of the Gram matrix with respect to each log-lengthscale."""
    diffs = _scaled_diffs(X, X, lengthscales)
    r = np.sqrt(np.sum(diffs**2, axis=-1))
    g = -5.0 / 3.0 * signal_var * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)
    return -g[None, :, :] * np.moveaxis(diffs**2, -1, 0)
