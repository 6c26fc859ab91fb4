"""Command-line interface.

Subcommands ``run``, ``compare``, ``reference`` and ``rethreshold``. Any
option may also come from a JSON config file given with ``--config``;
explicit flags override the file. Exit status is 0 on success, 2 on usage
errors and 1 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .exceptions import ConfigurationError, RobustOmcError
from .experiments import (
    DEFAULT_BUDGETS,
    METHODS,
    RunManifest,
    compare_methods,
    make_reference,
    rethreshold_run,
    run_experiment,
)
from .metrics import to_grid
from .storage import atomic_write_csv, atomic_write_json, to_json

log = logging.getLogger("robust_omc")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file supplying any option")
    p.add_argument("--experiment", choices=["exp1", "exp2", "custom"])
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output root directory")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-omc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one method and write its artifacts")
    _common(run)
    run.add_argument("--method", choices=METHODS)
    run.add_argument("--n", type=int, help="number of nuisance seeds")
    run.add_argument("--m", type=int, help="proposal draws per seed")
    run.add_argument("--budget", type=int, dest="N", help="rejection and reference budget")
    run.add_argument("--reference-n", type=int, dest="reference_n")
    run.add_argument("--quantiles", help="e,eprop,eloose or a single value")
    run.add_argument("--evaluator", choices=["true", "gp"])
    run.add_argument("--loose-box", choices=["scan", "expand"], dest="loose_box")
    run.add_argument("--bo-iterations", type=int, dest="bo_iterations")
    run.add_argument("--no-reference", action="store_false", dest="reference", default=None)

    cmp_ = sub.add_parser("compare", help="JSD-to-reference table over budgets and replicates")
    _common(cmp_)
    cmp_.add_argument("--method", action="append", dest="methods", help="repeat or comma-separate")
    cmp_.add_argument("--budget", type=_int_list, dest="budgets", help="comma-separated seed counts")
    cmp_.add_argument("--replicates", type=int)
    cmp_.add_argument("--m", type=int)
    cmp_.add_argument("--quantiles")

    ref = sub.add_parser("reference", help="compute and cache a rejection-ABC reference")
    _common(ref)
    ref.add_argument("--budget", type=int, dest="N")
    ref.add_argument("--n", type=int, dest="reference_n")

    re_ = sub.add_parser("rethreshold", help="re-weight a stored ROMC run without simulating")
    re_.add_argument("run_dir", type=Path)
    group = re_.add_mutually_exclusive_group(required=True)
    group.add_argument("--epsilon", type=float)
    group.add_argument("--quantile", type=float)
    re_.add_argument("--out", type=Path)
    re_.add_argument("-v", "--verbose", action="store_true")
    return parser


def merged_options(args: argparse.Namespace, skip=("command", "config", "verbose")) -> dict:
    """Config-file values overridden by explicitly given flags."""
    opts: dict = {}
    if getattr(args, "config", None):
        try:
            opts.update(json.loads(args.config.read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
    for key, value in vars(args).items():
        if key not in skip and value is not None:
            opts[key] = value
    return opts


def cmd_run(args) -> int:
    manifest = RunManifest.from_dict(merged_options(args))
    log.info("running %s on %s (n=%d, m=%d)", manifest.method, manifest.experiment, manifest.n, manifest.m)
    bundle = run_experiment(manifest)
    print(to_json({"directory": str(bundle.directory), **{k: v for k, v in bundle.summary.items() if k != "d_star"}}))
    return 0


def cmd_compare(args) -> int:
    opts = merged_options(args)
    methods = []
    for item in opts.pop("methods", None) or ["omc", "heuristic_omc", "boxed_romc"]:
        methods += [m for m in str(item).split(",") if m]
    budgets = opts.pop("budgets", DEFAULT_BUDGETS)
    replicates = opts.pop("replicates", 10)
    seed = opts.pop("seed", 0)
    out = opts.pop("out", "runs")
    workers = opts.pop("workers", 1)
    experiment = opts.pop("experiment", "exp1")
    if isinstance(opts.get("quantiles"), str):
        opts["quantiles"] = tuple(float(v) for v in opts["quantiles"].split(","))
    table = compare_methods(experiment, methods, budgets, replicates, seed, out, workers, **opts)
    for row in table:
        print(f"{row['method']:>18s} n={row['n']:<4d} JSD {row['jsd_mean']:.4f} +- {row['jsd_std']:.4f}  "
              f"ESS/n {row['ess_ratio_mean']:.3f}  {row['wall_time_mean']:.2f}s")
    print(f"wrote {Path(out) / 'comparison.csv'}")
    return 0


def cmd_reference(args) -> int:
    opts = merged_options(args)
    opts.pop("workers", None)
    manifest = RunManifest.from_dict({**opts, "method": "rejection"})
    setup = manifest.experiment_setup()
    out = Path(manifest.out)
    ref = make_reference(setup, manifest.N, manifest.reference_n, manifest.seed, out / "_cache")
    directory = out / f"reference-{setup.name}-{manifest.digest()}"
    rows = [
        {"draw_index": int(i), **{f"theta_{k}": float(v) for k, v in enumerate(t)}, "distance": float(d)}
        for i, t, d in zip(ref.seed_index, ref.theta, ref.distance)
    ]
    atomic_write_csv(directory / "samples.csv", rows)
    to_grid(ref, setup.grid).to_csv(directory / "grid.csv")
    summary = {"experiment": setup.name, "N": manifest.N, "n": manifest.reference_n, "epsilon": ref.epsilon,
               "cache": ref.metadata.get("cache"), "directory": str(directory)}
    atomic_write_json(directory / "summary.json", summary)
    print(to_json(summary))
    return 0


def cmd_rethreshold(args) -> int:
    summary = rethreshold_run(args.run_dir, args.epsilon, args.quantile, args.out)
    print(to_json(summary))
    return 0


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "reference": cmd_reference, "rethreshold": cmd_rethreshold}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RobustOmcError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
