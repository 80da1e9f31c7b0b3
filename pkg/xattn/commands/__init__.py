"""Subcommands of the ``xattn`` command line.

Each module exposes ``register(subparsers)``, which adds its parser and sets
``handler`` to a function taking the parsed arguments and a
:class:`CommandContext`.
"""

import json
import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Optional, TypeVar

import numpy as np
from pydantic import BaseModel, Field

from xattn.calibrate import load_calibration
from xattn.errors import ConfigError
from xattn.schemas import AttentionInputs, BlockMask, SelectionConfig, WorkloadSpec
from xattn.selection import assemble_mask, build_mask, score_block_probs

logger = logging.getLogger("xattn.commands")

T = TypeVar("T")


class CommandContext(BaseModel):
    """Resolved settings shared by every subcommand."""
    cfg: SelectionConfig
    threads: int = Field(default=1, ge=1)
    seed: Optional[int] = None


def replace_config(cfg: SelectionConfig, **changes: Any) -> SelectionConfig:
    """Validated copy of ``cfg`` with ``changes`` applied."""
    return SelectionConfig(**{**cfg.model_dump(), **changes})


def override_spec(spec: WorkloadSpec, ctx: CommandContext) -> WorkloadSpec:
    """Apply --seed and --causal to a workload recipe."""
    updates: dict[str, Any] = {}
    if ctx.seed is not None:
        updates["seed"] = ctx.seed
    if ctx.cfg.causal is not None:
        updates["causal"] = ctx.cfg.causal
    if not updates:
        return spec
    return WorkloadSpec.model_validate({**spec.model_dump(), **updates})


def map_heads(
    fn: Callable[[AttentionInputs], T], heads: Sequence[AttentionInputs], threads: int
) -> list[T]:
    """Apply ``fn`` to every head, in head order."""
    if threads > 1 and len(heads) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, heads))
    return [fn(h) for h in heads]


def head_thresholds(path: Optional[str], n_heads: int) -> Optional[list[float]]:
    """Per-head thresholds from a calibration file, or None without one.

    Raises:
        ConfigError: If the file calibrates a different number of heads.
    """
    if path is None:
        return None
    result = load_calibration(path)
    if len(result.thresholds) != n_heads:
        raise ConfigError(
            f"{path} holds {len(result.thresholds)} thresholds for {n_heads} heads"
        )
    logger.info(f"Using calibrated thresholds from {path}: {result.thresholds}")
    return result.thresholds


def mask_for_head(
    inp: AttentionInputs,
    cfg: SelectionConfig,
    thresholds: Optional[list[float]] = None,
    workers: int = 1,
) -> BlockMask:
    """Build one head's mask, at its calibrated threshold when one is given."""
    if thresholds is None:
        return build_mask(inp, cfg, workers)
    probs = score_block_probs(inp, cfg, workers)
    return assemble_mask(probs, cfg, inp.causal, tau=thresholds[inp.head])


def parse_int_list(text: str) -> list[int]:
    """Parse ``"4,8,16"`` into ``[4, 8, 16]``."""
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"Expected a comma-separated list of integers: {text}") from e
    if not values:
        raise ConfigError("Expected at least one integer")
    return values


def emit(payload: dict[str, Any]) -> None:
    """Print one JSON line of command output to stdout."""
    print(json.dumps(payload, default=_json_default))


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")
