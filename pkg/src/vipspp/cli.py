"""Command-line interface: ``vipspp run | eval-mmd | sample``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from vipspp.config import TARGET_DEFAULTS, VipsConfig, load_config_values
from vipspp.evaluation import MmdEvaluator
from vipspp.exceptions import TargetEvaluationError, VipsError
from vipspp.io import load_model, load_samples, save_model, save_samples, write_log
from vipspp.runner import run
from vipspp.targets import (
    NUM_LINKS,
    ExternalTarget,
    logistic_regression_target,
    make_gmm_target,
    planar_robot_target,
)

logger = logging.getLogger("vipspp")

OUTPUT_SAMPLES = 2000


def build_target(args: argparse.Namespace):
    """Instantiate the target named on the command line."""
    name = args.target
    target_seed = args.seed if args.target_seed is None else args.target_seed
    rng = np.random.default_rng(target_seed)
    if name == "gmm":
        return make_gmm_target(args.dim, args.gmm_components, rng)
    if name == "logreg":
        return logistic_regression_target(args.num_data, args.dim, rng)
    if name in ("planar1", "planar4"):
        if args.dim not in (None, NUM_LINKS):
            raise VipsError(f"the planar robot has {NUM_LINKS} joints; got --dim {args.dim}")
        return planar_robot_target(1 if name == "planar1" else 4)
    if not args.command:
        raise VipsError("--command is required for the external target")
    return ExternalTarget(args.command, args.dim)


def build_config(args: argparse.Namespace) -> VipsConfig:
    """Defaults, then per-target defaults, then the config file, then flags."""
    values = dict(TARGET_DEFAULTS[args.target])
    if args.config:
        # only keys present in the file override the per-target defaults
        values.update(load_config_values(args.config))
    overrides = {
        "seed": args.seed,
        "max_fevals": args.max_fevals,
        "max_iterations": args.max_iterations,
        "dissimilarity": args.dissimilarity,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_adapt:
        values["adapt"] = False
    if args.no_reuse:
        values["reuse"] = False
    if args.basic:
        values["basic"] = True
    if args.no_timing:
        values["record_time"] = False
    return VipsConfig.from_dict(values)


def cmd_run(args: argparse.Namespace) -> int:
    if args.target not in ("planar1", "planar4") and args.dim is None:
        raise VipsError("--dim is required for this target")
    config = build_config(args)
    target = build_target(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model, log = run(config, target)
    except TargetEvaluationError as err:
        save_model(err.model, out / "model.json")
        write_log(err.log, out / "log.csv")
        np.savetxt(out / "failed_batch.csv", np.atleast_2d(err.samples), delimiter=",", fmt="%.17g")
        logger.error("target evaluation failed: %s (state saved to %s)", err, out)
        return 3
    finally:
        if isinstance(target, ExternalTarget):
            target.close()
    save_model(model, out / "model.json")
    write_log(log, out / "log.csv")
    rng = np.random.default_rng([config.seed, 1])
    save_samples(model.sample(OUTPUT_SAMPLES, rng), out / "samples.csv")
    final = log[-1] if log else None
    if final is not None:
        logger.info(
            "finished after %d iterations, %d evaluations, %d components",
            final.iteration + 1, final.fevals, final.num_components,
        )
    return 0


def cmd_eval_mmd(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    gt = load_samples(args.ground_truth)
    if gt.shape[1] != model.dim:
        raise VipsError("ground truth and model have different dimensions")
    X = model.sample(args.num_samples, np.random.default_rng(args.seed))
    print(repr(MmdEvaluator(gt, args.alpha)(X)))
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    X = model.sample(args.n, np.random.default_rng(args.seed))
    if args.out:
        save_samples(X, args.out)
    else:
        np.savetxt(sys.stdout, X, delimiter=",", fmt="%.17g")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vipspp", description="Fit Gaussian mixture approximations to unnormalized densities."
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="fit a mixture to a target")
    p.add_argument("--target", required=True, choices=sorted(TARGET_DEFAULTS))
    p.add_argument("--dim", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-seed", type=int, help="seed of random targets (default: --seed)")
    p.add_argument("--config", help="JSON file with configuration values")
    p.add_argument("--max-fevals", type=int)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-adapt", action="store_true", help="fixed number of components")
    p.add_argument("--no-reuse", action="store_true", help="draw fresh samples only")
    p.add_argument(
        "--dissimilarity", choices=["mahalanobis", "kl-fwd", "kl-rev", "uniform"]
    )
    p.add_argument("--basic", action="store_true", help="reference variant without reuse")
    p.add_argument("--no-timing", action="store_true", help="write 0 to the seconds column")
    p.add_argument("--gmm-components", type=int, default=10)
    p.add_argument("--num-data", type=int, default=100, help="logistic regression data points")
    p.add_argument("--command", help="command line of an external target process")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval-mmd", help="MMD between model samples and ground truth")
    p.add_argument("--model", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--num-samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_mmd)

    p = sub.add_parser("sample", help="draw samples from a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV file (default: stdout)")
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (VipsError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
