"""Command-line entry point.

Selection parameters resolve in this order: command-line flags, then the
JSON file named by ``--config``, then environment settings. Every failure
is reported as one JSON line on stderr with exit code 1.
"""

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, Optional

from pydantic import ValidationError

from xattn import __version__
from xattn.commands import CommandContext, ablate, bench, calibrate, density, pipeline
from xattn.config import settings
from xattn.errors import ConfigError
from xattn.logging import setup_logging
from xattn.schemas import Pattern, SelectionConfig, Strategy

logger = logging.getLogger("xattn.cli")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors go through the JSON error line."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigError(message)


def parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ConfigError(f"Expected a boolean, got {text!r}")


def parse_pattern(text: str) -> dict[str, Any]:
    """``NAME`` or ``NAME:SEED``, e.g. ``random:7``."""
    name, _, seed = text.partition(":")
    try:
        fields: dict[str, Any] = {"pattern": Pattern(name)}
    except ValueError as e:
        choices = ", ".join(p.value for p in Pattern)
        raise ConfigError(f"Unknown pattern {name!r}; expected one of {choices}") from e
    if seed:
        try:
            fields["pattern_seed"] = int(seed)
        except ValueError as e:
            raise ConfigError(f"Pattern seed must be an integer, got {seed!r}") from e
    return fields


def parse_strategy(text: str) -> dict[str, Any]:
    """``threshold[:TAU]``, ``topk[:K]`` or ``topratio[:RATIO]``."""
    name, _, param = text.partition(":")
    try:
        strategy = Strategy(name)
    except ValueError as e:
        choices = ", ".join(s.value for s in Strategy)
        raise ConfigError(
            f"Unknown strategy {name!r}; expected one of {choices}"
        ) from e

    fields: dict[str, Any] = {"strategy": strategy}
    if param:
        try:
            if strategy == Strategy.TOPK:
                fields["top_k"] = int(param)
            elif strategy == Strategy.TOPRATIO:
                fields["top_ratio"] = float(param)
            else:
                fields["tau"] = float(param)
        except ValueError as e:
            raise ConfigError(f"Bad parameter for {name}: {param!r}") from e
    return fields


def build_parser() -> argparse.ArgumentParser:
    """Global flags plus one subparser per command."""
    parser = _Parser(
        prog="xattn",
        description="Antidiagonal block-sparse attention toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON file of selection settings")
    parser.add_argument("--seed", type=int, help="Workload and pattern seed")
    parser.add_argument("--block-size", type=int, help="Block size B")
    parser.add_argument("--stride", type=int, help="Stride S")
    parser.add_argument("--tau", type=float, help="Threshold in (0, 1]")
    parser.add_argument("--pattern", help="Scoring pattern NAME[:SEED]")
    parser.add_argument("--strategy", help="Selection strategy NAME[:PARAM]")
    parser.add_argument("--causal", help="Override the workload causal flag")
    parser.add_argument("--force-diag", help="Always select the diagonal block")
    parser.add_argument("--force-first", help="Always select the first key block")
    parser.add_argument("--threads", type=int, help="Worker threads")
    parser.add_argument(
        "--log-level",
        type=str.upper,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Console log level",
    )

    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in (pipeline, ablate, calibrate, bench, density):
        module.register(subparsers)
    return parser


def _config_file(path: str) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must hold a JSON object")
    unknown = set(data) - set(SelectionConfig.model_fields)
    if unknown:
        raise ConfigError(f"Unknown config keys in {path}: {sorted(unknown)}")
    return data


def resolve_config(args: argparse.Namespace) -> SelectionConfig:
    """Settings defaults, overlaid by the config file, overlaid by flags."""
    fields: dict[str, Any] = {
        "block_size": settings.XATTN_BLOCK_SIZE,
        "stride": settings.XATTN_STRIDE,
        "tau": settings.XATTN_TAU,
        "top_k": settings.XATTN_TOPK,
        "top_ratio": settings.XATTN_TOPRATIO,
        "pattern_seed": settings.XATTN_SEED,
    }
    if args.config:
        fields.update(_config_file(args.config))

    if args.seed is not None:
        fields["pattern_seed"] = args.seed
    if args.block_size is not None:
        fields["block_size"] = args.block_size
    if args.stride is not None:
        fields["stride"] = args.stride
    if args.strategy is not None:
        fields.update(parse_strategy(args.strategy))
    if args.tau is not None:
        fields["tau"] = args.tau
    if args.pattern is not None:
        fields.update(parse_pattern(args.pattern))
    if args.causal is not None:
        fields["causal"] = parse_bool(args.causal)
    if args.force_diag is not None:
        fields["force_diagonal_block"] = parse_bool(args.force_diag)
    if args.force_first is not None:
        fields["force_first_block"] = parse_bool(args.force_first)

    return SelectionConfig(**fields)


def resolve_context(args: argparse.Namespace) -> CommandContext:
    threads = args.threads if args.threads is not None else settings.threads
    if threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {threads}")
    return CommandContext(cfg=resolve_config(args), threads=threads, seed=args.seed)


def _report(error: Exception, command: str) -> None:
    kind = "ConfigError" if isinstance(error, ValidationError) else type(error).__name__
    line = {"error": kind, "message": str(error), "command": command}
    print(json.dumps(line), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    command = "xattn"
    setup_logging()
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        if args.log_level:
            setup_logging(args.log_level)
        ctx = resolve_context(args)
        logger.info(
            f"Running {command} with B={ctx.cfg.block_size} S={ctx.cfg.stride} "
            f"tau={ctx.cfg.tau} pattern={ctx.cfg.pattern.value} "
            f"strategy={ctx.cfg.strategy.value} threads={ctx.threads}"
        )
        return args.handler(args, ctx)
    except Exception as e:
        logger.error(f"Command {command} failed: {e}", exc_info=True)
        _report(e, command)
        return 1


if __name__ == "__main__":
    sys.exit(main())
