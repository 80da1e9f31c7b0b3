"""Per-head threshold calibration."""

import argparse
import logging

from xattn.calibrate import calibrate_thresholds, fidelity_evaluator, save_calibration
from xattn.commands import CommandContext, emit
from xattn.config import settings
from xattn.errors import ConfigError
from xattn.workloads import load_workload

logger = logging.getLogger("xattn.commands.calibrate")


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser(
        "calibrate", help="Predict minimum per-head thresholds"
    )
    parser.add_argument("workloads", nargs="+", help="Calibration workload directories")
    parser.add_argument("--steps", type=int, help="Total threshold reductions M")
    parser.add_argument("--t-init", type=float, help="Starting threshold")
    parser.add_argument("--epsilon", type=float, help="Allowed performance drop")
    parser.add_argument("--out", required=True, help="Calibration JSON")
    parser.set_defaults(handler=cmd_calibrate)


def cmd_calibrate(args: argparse.Namespace, ctx: CommandContext) -> int:
    steps = settings.XATTN_CALIBRATION_STEPS if args.steps is None else args.steps
    t_init = ctx.cfg.tau if args.t_init is None else args.t_init
    if steps < 1:
        raise ConfigError(f"--steps must be >= 1, got {steps}")

    workloads = [load_workload(d, causal=ctx.cfg.causal)[1] for d in args.workloads]
    evaluator = fidelity_evaluator(workloads, ctx.cfg, ctx.threads)
    result = calibrate_thresholds(
        evaluator,
        heads=evaluator.heads,
        steps=steps,
        t_init=t_init,
        epsilon=args.epsilon,
        workers=ctx.threads,
    )
    save_calibration(result, args.out)

    baseline = [t_init] * evaluator.heads
    emit(
        {
            "thresholds": result.thresholds,
            "step_counts": result.step_counts,
            "baseline_density": evaluator.mean_density(baseline),
            "calibrated_density": evaluator.mean_density(result.thresholds),
            "baseline_perf": result.baseline_perf,
            "final_perf": result.final_perf,
            "out": args.out,
        }
    )
    return 0
