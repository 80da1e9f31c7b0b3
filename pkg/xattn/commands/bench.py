"""Selection / sparse attention / dense attention timing benchmark."""

import argparse
import logging
import statistics
import time
from collections.abc import Callable
from typing import TypeVar

from threadpoolctl import threadpool_limits

from xattn.attention import full_attention
from xattn.commands import (
    CommandContext,
    emit,
    head_thresholds,
    mask_for_head,
    override_spec,
)
from xattn.config import settings
from xattn.errors import ConfigError
from xattn.reporting import write_csv
from xattn.schemas import AttentionInputs, BenchRecord
from xattn.selection import density
from xattn.sparse import output_error, sparse_attention
from xattn.workloads import generate, load_spec

logger = logging.getLogger("xattn.commands.bench")

T = TypeVar("T")


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("bench", help="Time selection and attention")
    parser.add_argument("spec", help="WorkloadSpec JSON file")
    parser.add_argument("--repeats", type=int, help="Timed repetitions (>= 5)")
    parser.add_argument("--thresholds", help="Calibration JSON with per-head tau")
    parser.add_argument("--out", required=True, help="CSV report")
    parser.set_defaults(handler=cmd_bench)


def time_median(fn: Callable[[], T], repeats: int) -> tuple[int, T]:
    """Median wall time in ns over ``repeats`` runs after one warm-up run."""
    result = fn()
    samples = []
    for _ in range(repeats):
        start = time.perf_counter_ns()
        result = fn()
        samples.append(time.perf_counter_ns() - start)
    return int(statistics.median(samples)), result


def bench_head(
    inp: AttentionInputs,
    ctx: CommandContext,
    repeats: int,
    seed: int,
    thresholds: list[float] | None = None,
) -> BenchRecord:
    """Time one head; selection and attention are measured separately."""
    cfg, threads = ctx.cfg, ctx.threads
    select_ns, mask = time_median(
        lambda: mask_for_head(inp, cfg, thresholds, threads), repeats
    )
    attend_ns, out = time_median(
        lambda: sparse_attention(inp, mask, cfg.block_size, threads), repeats
    )
    full_ns, full = time_median(lambda: full_attention(inp), repeats)

    tau = cfg.tau if thresholds is None else thresholds[inp.head]
    record = BenchRecord(
        L=inp.length,
        B=cfg.block_size,
        S=cfg.stride,
        tau=tau,
        pattern=cfg.pattern.value,
        strategy=cfg.strategy.value,
        head=inp.head,
        density=density(mask, inp.causal),
        select_time_ns=select_ns,
        attend_time_ns=attend_ns,
        full_time_ns=full_ns,
        speedup=full_ns / max(select_ns + attend_ns, 1),
        output_error=output_error(out, full),
        seed=seed,
        threads=threads,
    )
    logger.info(
        f"Head {inp.head}: density {record.density:.4f}, select {select_ns} ns, "
        f"attend {attend_ns} ns, full {full_ns} ns, speedup {record.speedup:.2f}x"
    )
    return record


def cmd_bench(args: argparse.Namespace, ctx: CommandContext) -> int:
    repeats = settings.XATTN_BENCH_REPEATS if args.repeats is None else args.repeats
    if repeats < 5:
        raise ConfigError(f"--repeats must be >= 5, got {repeats}")

    spec = override_spec(load_spec(args.spec), ctx)
    heads = generate(spec)
    thresholds = head_thresholds(args.thresholds, len(heads))
    # heads are timed one at a time; BLAS runs on the recorded thread count
    with threadpool_limits(limits=ctx.threads, user_api="blas"):
        records = [
            bench_head(inp, ctx, repeats, spec.seed, thresholds) for inp in heads
        ]

    write_csv(args.out, BenchRecord, records)
    emit({"rows": len(records), "threads": ctx.threads, "out": args.out})
    return 0
