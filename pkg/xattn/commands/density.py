"""Mask density versus context length and stride."""

import argparse
import logging

import numpy as np

from xattn.commands import (
    CommandContext,
    emit,
    map_heads,
    override_spec,
    parse_int_list,
    replace_config,
)
from xattn.reporting import write_csv
from xattn.schemas import DensityRecord, WorkloadSpec
from xattn.selection import build_mask, density
from xattn.workloads import generate, load_spec

logger = logging.getLogger("xattn.commands.density")


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser(
        "density", help="Sweep mask density over context lengths"
    )
    parser.add_argument("spec", help="WorkloadSpec JSON file")
    parser.add_argument("--lengths", required=True, help="Comma-separated lengths")
    parser.add_argument("--strides", help="Comma-separated strides (default --stride)")
    parser.add_argument("--out", required=True, help="CSV report")
    parser.set_defaults(handler=cmd_density)


def density_sweep(
    spec: WorkloadSpec,
    ctx: CommandContext,
    lengths: list[int],
    strides: list[int],
) -> list[DensityRecord]:
    """Mean density over heads for every (length, stride) pair."""
    records = []
    for length in lengths:
        sized = WorkloadSpec.model_validate({**spec.model_dump(), "length": length})
        heads = generate(sized)
        for stride in strides:
            cfg = replace_config(ctx.cfg, stride=stride)
            values = map_heads(
                lambda inp: density(build_mask(inp, cfg), inp.causal),
                heads,
                ctx.threads,
            )
            records.append(
                DensityRecord(
                    L=length,
                    B=cfg.block_size,
                    S=stride,
                    tau=cfg.tau,
                    pattern=cfg.pattern.value,
                    strategy=cfg.strategy.value,
                    heads=len(heads),
                    density=float(np.mean(values)),
                    seed=sized.seed,
                )
            )
            logger.info(f"L={length} S={stride}: density {records[-1].density:.4f}")
    return records


def cmd_density(args: argparse.Namespace, ctx: CommandContext) -> int:
    spec = override_spec(load_spec(args.spec), ctx)
    lengths = parse_int_list(args.lengths)
    strides = parse_int_list(args.strides) if args.strides else [ctx.cfg.stride]
    records = density_sweep(spec, ctx, lengths, strides)
    write_csv(args.out, DensityRecord, records)
    emit({"rows": len(records), "out": args.out})
    return 0
