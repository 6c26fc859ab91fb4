"""Matern 5/2 kernel primitives with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; setting the environment
variable ``ROBUST_OMC_PURE_PYTHON=1`` before import forces the fallback.
Both backends expose identical functions, also reachable through
:data:`BACKENDS` so tests and benchmarks can compare them directly.
"""

import os

import numpy as np

from . import _kernels_py

BACKENDS = {"python": _kernels_py}

if not os.environ.get("ROBUST_OMC_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
    if _compiled is not None:
        BACKENDS["cython"] = _compiled

#: Name of the backend used by the module-level functions.
BACKEND = "cython" if "cython" in BACKENDS else "python"
_impl = BACKENDS[BACKEND]


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def matern52_cov(X1, X2, lengthscales, signal_var, backend=None):
    """Covariance matrix between the rows of ``X1`` and ``X2``."""
    impl = BACKENDS[backend] if backend else _impl
    return impl.matern52_cov(_c(X1), _c(X2), _c(lengthscales), float(signal_var))


def matern52_grad(x, X, lengthscales, signal_var, backend=None):
    """Gradient of ``k(x, X_i)`` with respect to ``x``, shape ``(n, d)``."""
    impl = BACKENDS[backend] if backend else _impl
    return impl.matern52_grad(_c(x), _c(X), _c(lengthscales), float(signal_var))


def matern52_mean_hessian(x, X, alpha, lengthscales, signal_var, backend=None):
    """Hessian at ``x`` of the weighted kernel sum ``sum_i alpha_i k(x, X_i)``."""
    impl = BACKENDS[backend] if backend else _impl
    return impl.matern52_mean_hessian(_c(x), _c(X), _c(alpha), _c(lengthscales), float(signal_var))


def matern52_lengthscale_grads(X, lengthscales, signal_var, backend=None):
    """Gram-matrix derivatives with respect to each log-lengthscale, shape ``(d, n, n)``."""
    impl = BACKENDS[backend] if backend else _impl
    return impl.matern52_lengthscale_grads(_c(X), _c(lengthscales), float(signal_var))
