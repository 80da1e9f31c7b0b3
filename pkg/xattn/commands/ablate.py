"""Pattern × stride × strategy ablation grid."""

import argparse
import logging

from xattn.attention import full_attention
from xattn.commands import (
    CommandContext,
    emit,
    map_heads,
    parse_int_list,
    replace_config,
)
from xattn.metrics import REPORT_METADATA, block_sum_ground_truth, pattern_similarity
from xattn.reporting import write_csv
from xattn.schemas import AblationRecord, AttentionInputs, Pattern, Strategy
from xattn.sparse import output_error, sparse_attention
from xattn.workloads import load_workload

logger = logging.getLogger("xattn.commands.ablate")

DEFAULT_STRIDES = "4,8,16,64"


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser(
        "ablate", help="Compare scoring patterns, strides and strategies"
    )
    parser.add_argument("workload", help="Workload directory")
    parser.add_argument(
        "--strides", default=DEFAULT_STRIDES, help="Comma-separated strides"
    )
    parser.add_argument("--out", required=True, help="CSV report")
    parser.set_defaults(handler=cmd_ablate)


def cmd_ablate(args: argparse.Namespace, ctx: CommandContext) -> int:
    spec, heads = load_workload(args.workload, causal=ctx.cfg.causal)
    strides = parse_int_list(args.strides)
    records = ablation_grid(heads, ctx, strides, seed=spec.seed)

    write_csv(args.out, AblationRecord, records, metadata=REPORT_METADATA)
    emit({"rows": len(records), "out": args.out})
    return 0


def ablation_grid(
    heads: list[AttentionInputs],
    ctx: CommandContext,
    strides: list[int],
    seed: int = 0,
) -> list[AblationRecord]:
    """One record per (pattern, stride, strategy, head), in that nesting order."""
    B = ctx.cfg.block_size
    truth = map_heads(lambda inp: block_sum_ground_truth(inp, B), heads, ctx.threads)
    full = map_heads(full_attention, heads, ctx.threads)

    records: list[AblationRecord] = []
    for pattern in Pattern:
        for stride in strides:
            for strategy in Strategy:
                cfg = replace_config(
                    ctx.cfg, pattern=pattern, stride=stride, strategy=strategy
                )

                def measure(inp: AttentionInputs) -> AblationRecord:
                    row, mask = pattern_similarity(inp, cfg, truth[inp.head])
                    out = sparse_attention(inp, mask, B)
                    return AblationRecord(
                        L=inp.length,
                        B=B,
                        S=stride,
                        tau=cfg.tau,
                        pattern=pattern.value,
                        strategy=strategy.value,
                        head=inp.head,
                        rank_correlation=row.rank_correlation,
                        js_divergence=row.js_divergence,
                        density=row.density_at_tau,
                        output_error=output_error(out, full[inp.head]),
                        seed=seed,
                    )

                records.extend(map_heads(measure, heads, ctx.threads))
            logger.info(f"Ablation {pattern.value} S={stride} done")
    return records
