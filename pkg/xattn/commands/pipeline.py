"""Workload generation and the score → select → attend pipeline."""

import argparse
import logging
from pathlib import Path

import numpy as np

from xattn.attention import full_attention
from xattn.commands import (
    CommandContext,
    emit,
    head_thresholds,
    map_heads,
    mask_for_head,
    override_spec,
)
from xattn.errors import ConfigError
from xattn.schemas import AttentionInputs
from xattn.scoring import TileScorer
from xattn.selection import check_mask, density, load_mask, save_mask
from xattn.sparse import output_error, sparse_attention_with_stats
from xattn.tensor import save_tensor
from xattn.workloads import generate, load_spec, load_workload, save_workload

logger = logging.getLogger("xattn.commands.pipeline")


def register(subparsers: argparse._SubParsersAction) -> None:
    gen = subparsers.add_parser("gen-workload", help="Generate a synthetic workload")
    gen.add_argument("spec", help="WorkloadSpec JSON file")
    gen.add_argument("out_dir", help="Directory to write workload.json and Q/K/V")
    gen.set_defaults(handler=cmd_gen_workload)

    score = subparsers.add_parser("score", help="Write tile scores per head")
    score.add_argument("workload", help="Workload directory")
    score.add_argument("--out", required=True, help="Output directory")
    score.set_defaults(handler=cmd_score)

    select = subparsers.add_parser("select", help="Write block masks per head")
    select.add_argument("workload", help="Workload directory")
    select.add_argument("--out", required=True, help="Mask file")
    select.set_defaults(handler=cmd_select)

    attend = subparsers.add_parser("attend", help="Run block-sparse attention")
    attend.add_argument("workload", help="Workload directory")
    attend.add_argument("--mask", help="Mask file from `select`")
    attend.add_argument("--thresholds", help="Calibration JSON with per-head tau")
    attend.add_argument("--out", required=True, help="Output tensor file")
    attend.add_argument(
        "--no-oracle", action="store_true", help="Skip the dense reference"
    )
    attend.set_defaults(handler=cmd_attend)


def cmd_gen_workload(args: argparse.Namespace, ctx: CommandContext) -> int:
    spec = override_spec(load_spec(args.spec), ctx)

    out = save_workload(spec, generate(spec), args.out_dir)
    emit({"workload": str(out), "kind": spec.kind.value, "heads": spec.heads})
    return 0


def cmd_score(args: argparse.Namespace, ctx: CommandContext) -> int:
    _, heads = load_workload(args.workload, causal=ctx.cfg.causal)
    out = Path(args.out)

    def score_head(inp: AttentionInputs) -> tuple[int, int]:
        scorer = TileScorer(inp, ctx.cfg)
        maps = [scorer.score(b) for b in range(scorer.n_query_blocks)]
        save_tensor(np.stack([m.raw for m in maps]), out / f"head{inp.head}.raw.xatn")
        save_tensor(
            np.stack([m.prob for m in maps]), out / f"head{inp.head}.prob.xatn"
        )
        return inp.head, len(maps)

    for head, blocks in map_heads(score_head, heads, ctx.threads):
        emit({"head": head, "query_blocks": blocks, "out": str(out)})
    return 0


def cmd_select(args: argparse.Namespace, ctx: CommandContext) -> int:
    _, heads = load_workload(args.workload, causal=ctx.cfg.causal)
    masks = map_heads(lambda inp: mask_for_head(inp, ctx.cfg), heads, ctx.threads)
    save_mask(masks, args.out)

    densities = [density(m, inp.causal) for m, inp in zip(masks, heads)]
    for inp, value in zip(heads, densities):
        emit({"head": inp.head, "density": value})
    emit({"mean_density": float(np.mean(densities)), "out": args.out})
    return 0


def cmd_attend(args: argparse.Namespace, ctx: CommandContext) -> int:
    _, heads = load_workload(args.workload, causal=ctx.cfg.causal)
    B = ctx.cfg.block_size

    if args.mask is not None:
        if args.thresholds is not None:
            raise ConfigError("--mask and --thresholds are mutually exclusive")
        masks = load_mask(args.mask)
        if len(masks) != len(heads):
            raise ConfigError(
                f"{args.mask} holds {len(masks)} masks for {len(heads)} heads"
            )
        for mask, inp in zip(masks, heads):
            check_mask(mask, inp.causal)
    else:
        thresholds = head_thresholds(args.thresholds, len(heads))
        masks = map_heads(
            lambda inp: mask_for_head(inp, ctx.cfg, thresholds), heads, ctx.threads
        )

    def attend_head(inp: AttentionInputs) -> tuple[np.ndarray, dict]:
        mask = masks[inp.head]
        out, stats = sparse_attention_with_stats(inp, mask, B)
        line = {
            "head": inp.head,
            "density": density(mask, inp.causal),
            "score_evaluations": stats.score_evaluations,
            "visited_blocks": stats.visited_blocks,
            "output_error": None,
        }
        if not args.no_oracle:
            line["output_error"] = output_error(out, full_attention(inp))
        return out, line

    results = map_heads(attend_head, heads, ctx.threads)
    save_tensor(np.stack([r[0] for r in results]), args.out)
    for _, line in results:
        emit(line)
    return 0
