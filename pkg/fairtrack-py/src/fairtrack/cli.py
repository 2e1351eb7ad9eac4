"""``fairtrack`` command line.

::

    fairtrack run    --config run.json [--out DIR] [--trainer NAME] [--seed N]
    fairtrack sweep  --config run.json --lambda-grid 1e-5:100:50 --seeds 0-9 [--workers N]
    fairtrack ablate --config run.json --which set_size|heterogeneity|convergence [--seeds 0-9]

Exit status is 0 on success, 1 when any run of a sweep or ablation failed and
2 for configuration errors. ``FAIRTRACK_OUTPUT_ROOT`` sets the default
output root.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from .config import RunConfigFile, Trainer, load_config
from .errors import ConfigurationError, FairtrackError
from .experiments import (
    DEFAULT_ALPHAS,
    ablate_convergence,
    ablate_heterogeneity,
    ablate_set_size,
    default_output_root,
    parse_lambda_grid,
    run_and_write,
    sweep,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_CONFIG = 2


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0,2,5"`` or an inclusive range ``"0-9"``."""
    try:
        if "-" in text:
            lo, hi = (int(part) for part in text.split("-", 1))
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(part) for part in text.split(",") if part]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse seeds {text!r}", field="seeds") from exc


def _parse_floats(text: str, name: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse {name} {text!r}", field=name) from exc


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairtrack", description="Globally fair federated learning experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, default=None, help="output root (default: $FAIRTRACK_OUTPUT_ROOT or ./runs)")
        p.add_argument("--trainer", choices=[t.value for t in Trainer], default=None, help="override the trainer")
        p.add_argument("--workers", type=int, default=1, help="parallel workers")

    run_p = sub.add_parser("run", help="execute one run")
    common(run_p)
    run_p.add_argument("--seed", type=int, default=None, help="override the seed")

    sweep_p = sub.add_parser("sweep", help="λ sweep over seeds with Pareto extraction")
    common(sweep_p)
    sweep_p.add_argument("--lambda-grid", default="1e-5:100:50", help="log-spaced grid lo:hi:n")
    sweep_p.add_argument("--seeds", default="0", help="seed list (0,1,2) or range (0-9)")

    ablate_p = sub.add_parser("ablate", help="set_size, heterogeneity or convergence ablation")
    common(ablate_p)
    ablate_p.add_argument("--which", required=True, choices=["set_size", "heterogeneity", "convergence"])
    ablate_p.add_argument("--lambda-grid", default="1e-5:100:50", help="grid for the set_size ablation")
    ablate_p.add_argument("--seeds", default="0-9", help="seed list (0,1,2) or range (0-9)")
    ablate_p.add_argument(
        "--alphas", default=",".join(str(a) for a in DEFAULT_ALPHAS), help="heterogeneity levels, comma separated"
    )
    return parser


def _load(args: argparse.Namespace) -> RunConfigFile:
    config = load_config(args.config)
    if args.trainer is not None:
        config = config.with_trainer(args.trainer)
    return config


def cmd_run(args: argparse.Namespace) -> int:
    config = _load(args)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    out = run_and_write(config, args.out or default_output_root(), workers=args.workers)
    print(out)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load(args)
    lambdas = parse_lambda_grid(args.lambda_grid)
    result = sweep(config, lambdas, parse_seeds(args.seeds), args.out or default_output_root(), workers=args.workers)
    print(result.directory)
    return EXIT_RUN_FAILED if result.failures else EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _load(args)
    root = args.out or default_output_root()
    seeds = parse_seeds(args.seeds)
    if args.which == "set_size":
        result = ablate_set_size(config, parse_lambda_grid(args.lambda_grid), seeds, root, workers=args.workers)
    elif args.which == "heterogeneity":
        alphas = _parse_floats(args.alphas, "alphas")
        result = ablate_heterogeneity(config, seeds, root, workers=args.workers, alphas=alphas)
    else:
        result = ablate_convergence(config, seeds, root, workers=args.workers)
    print(result.directory)
    return EXIT_RUN_FAILED if result.failures else EXIT_OK


_COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "ablate": cmd_ablate}


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s | %(name)s | %(message)s",
        stream=sys.stderr,
    )
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"fairtrack: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FairtrackError as exc:
        logger.error("command=<%s> | %s", args.command, exc)
        return EXIT_RUN_FAILED


if __name__ == "__main__":
    sys.exit(main())
