"""Time the Matern 5/2 kernels on each available backend.

Usage::

    python benchmarks/bench_kernels.py [--points 200] [--dim 2] [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from robust_omc import kernels


def cases(points: int, dim: int, rng: np.random.Generator) -> dict:
    X = rng.normal(size=(points, dim))
    x = rng.normal(size=dim)
    alpha = rng.normal(size=points)
    ls = rng.uniform(0.5, 2.0, dim)
    return {
        "matern52_cov": (X, X, ls, 1.5),
        "matern52_grad": (x, X, ls, 1.5),
        "matern52_mean_hessian": (x, X, alpha, ls, 1.5),
        "matern52_lengthscale_grads": (X, ls, 1.5),
    }


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=200)
    parser.add_argument("--dim", type=int, default=2)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)

    backends = sorted(kernels.BACKENDS)
    print(f"backends: {', '.join(backends)} (module default: {kernels.BACKEND})")
    print(f"{'kernel':<28s}" + "".join(f"{b + ' ms':>14s}" for b in backends) + f"{'speed-up':>10s}")
    for name, call_args in cases(args.points, args.dim, np.random.default_rng(0)).items():
        fn = getattr(kernels, name)
        times = {}
        for b in backends:
            fn(*call_args, backend=b)  # warm-up
            best = min(timeit.repeat(lambda: fn(*call_args, backend=b), number=1, repeat=args.repeat))
            times[b] = 1e3 * best
        ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<28s}" + "".join(f"{times[b]:>14.3f}" for b in backends) + f"{ratio:>10.1f}")


if __name__ == "__main__":
    main()
