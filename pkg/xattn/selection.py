"""Block selection from tile probabilities and BlockMask assembly."""

import logging
import math
from collections.abc import Collection, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from xattn.errors import InvalidDistributionError, MaskError
from xattn.schemas import (
    AttentionInputs,
    BlockMask,
    SelectionConfig,
    Strategy,
    TileScoreMap,
)
from xattn.scoring import TileScorer
from xattn.tensor import BoolGrid, load_bool_grid, save_bool_grid

logger = logging.getLogger("xattn.selection")


def block_probs(ts: TileScoreMap, block_size: int, stride: int) -> np.ndarray:
    """Aggregate tile probabilities of one query block into key-block mass.

    Each unmasked tile row is a distribution; the result is their average,
    summed over the key tiles of each block.
    """
    tiles_per_block = block_size // stride
    valid_rows = ts.prob[ts.row_valid].astype(np.float64)
    n_tiles = ts.prob.shape[1]
    n_key_blocks = -(-n_tiles // tiles_per_block)

    per_tile = np.zeros(n_key_blocks * tiles_per_block, dtype=np.float64)
    per_tile[:n_tiles] = valid_rows.sum(axis=0)
    return per_tile.reshape(n_key_blocks, tiles_per_block).sum(axis=1) / len(valid_rows)


def find_blocks(
    p: Sequence[float] | np.ndarray, tau: float, forced: Collection[int] = ()
) -> set[int]:
    """Smallest superset of ``forced`` whose probability mass reaches ``tau``.

    Forced blocks count first; the rest are added in descending probability
    (ties by lower index) until the cumulative mass is >= ``tau``. Blocks
    with zero mass are never added, so ``tau = 1`` selects exactly the
    blocks with positive mass plus the forced ones.

    Raises:
        InvalidDistributionError: If ``p`` is empty.
    """
    probs = np.asarray(p, dtype=np.float64)
    if probs.size == 0:
        raise InvalidDistributionError("find_blocks needs a non-empty distribution")

    selected = {int(b) for b in forced}
    if tau >= 1.0:
        return selected | {int(b) for b in np.flatnonzero(probs > 0)}

    mass = math.fsum(probs[b] for b in selected)
    if mass >= tau:
        return selected

    for block in np.argsort(-probs, kind="stable"):
        block = int(block)
        if block in selected:
            continue
        if probs[block] <= 0:
            break
        selected.add(block)
        mass += probs[block]
        if mass >= tau:
            break
    return selected


def _ranked_valid(probs: np.ndarray, valid: Optional[BoolGrid]) -> np.ndarray:
    order = np.argsort(-probs, kind="stable")
    if valid is None:
        return order
    return order[valid[order]]


def select_topk(
    p: Sequence[float] | np.ndarray,
    k: int,
    forced: Collection[int] = (),
    valid: Optional[BoolGrid] = None,
) -> set[int]:
    """The ``k`` most probable valid blocks (ties by lower index) plus ``forced``.

    ``k`` is clamped to the number of valid blocks.
    """
    ranked = _ranked_valid(np.asarray(p, dtype=np.float64), valid)
    return {int(b) for b in ranked[: min(k, len(ranked))]} | set(forced)


def select_topratio(
    p: Sequence[float] | np.ndarray,
    ratio: float,
    forced: Collection[int] = (),
    valid: Optional[BoolGrid] = None,
) -> set[int]:
    """The ⌈ratio·n_valid⌉ most probable valid blocks plus ``forced``."""
    ranked = _ranked_valid(np.asarray(p, dtype=np.float64), valid)
    # guard ⌈0.27·100⌉ against 27.000000000000004
    count = max(1, math.ceil(ratio * len(ranked) - 1e-9))
    return {int(b) for b in ranked[:count]} | set(forced)


def select_blocks(
    p: np.ndarray,
    cfg: SelectionConfig,
    forced: Collection[int],
    valid: BoolGrid,
    tau: Optional[float] = None,
) -> set[int]:
    """Apply the strategy named by ``cfg``; ``tau`` overrides ``cfg.tau``."""
    if cfg.strategy == Strategy.TOPK:
        return select_topk(p, cfg.top_k, forced, valid)
    if cfg.strategy == Strategy.TOPRATIO:
        return select_topratio(p, cfg.top_ratio, forced, valid)
    return find_blocks(p, cfg.tau if tau is None else tau, forced)


def score_block_probs(
    inp: AttentionInputs, cfg: SelectionConfig, workers: int = 1
) -> list[np.ndarray]:
    """Key-block probabilities of every query block, in block order."""
    scorer = TileScorer(inp, cfg)

    def probs_for(block: int) -> np.ndarray:
        return block_probs(scorer.score(block), cfg.block_size, cfg.stride)

    blocks = range(scorer.n_query_blocks)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(probs_for, blocks))
    return [probs_for(b) for b in blocks]


def assemble_mask(
    probs: Sequence[np.ndarray],
    cfg: SelectionConfig,
    causal: bool,
    tau: Optional[float] = None,
) -> BlockMask:
    """Concatenate per-query-block selections into a BlockMask."""
    n_query = len(probs)
    n_key = len(probs[0])
    bits = np.zeros((n_query, n_key), dtype=bool)
    key_ids = np.arange(n_key)

    for b, p in enumerate(probs):
        valid = key_ids <= b if causal else np.ones(n_key, dtype=bool)
        forced = set()
        if cfg.force_diagonal_block:
            forced.add(b)
        if cfg.force_first_block:
            forced.add(0)

        selected = [k for k in select_blocks(p, cfg, forced, valid, tau) if valid[k]]
        bits[b, selected] = True
        logger.debug(
            f"Query block {b}: selected {len(selected)}/{int(valid.sum())} blocks"
        )

    mask = BlockMask(bits=bits)
    check_mask(mask, causal)
    return mask


def build_mask(
    inp: AttentionInputs, cfg: SelectionConfig, workers: int = 1
) -> BlockMask:
    """Score, aggregate and select every query block of one head."""
    probs = score_block_probs(inp, cfg, workers)
    mask = assemble_mask(probs, cfg, inp.causal)
    logger.debug(
        f"Head {inp.head}: mask {mask.bits.shape} density "
        f"{density(mask, inp.causal):.4f}"
    )
    return mask


def check_mask(mask: BlockMask, causal: bool) -> None:
    """Raise MaskError if a row is empty or a causal mask selects the future."""
    if causal and np.triu(mask.bits, k=1).any():
        raise MaskError("Causal mask selects blocks above the diagonal")
    empty = ~mask.bits.any(axis=1)
    if empty.any():
        raise MaskError(f"Query block {int(np.flatnonzero(empty)[0])} selects nothing")


def valid_block_grid(n_query: int, n_key: int, causal: bool) -> BoolGrid:
    """Cells a mask may select: lower triangle when causal, all otherwise."""
    if causal:
        return np.tril(np.ones((n_query, n_key), dtype=bool))
    return np.ones((n_query, n_key), dtype=bool)


def density(mask: BlockMask, causal: bool) -> float:
    """Selected blocks divided by causally valid blocks."""
    valid = valid_block_grid(mask.n_query_blocks, mask.n_key_blocks, causal)
    return float((mask.bits & valid).sum() / valid.sum())


def save_mask(mask: BlockMask | Sequence[BlockMask], path: str | Path) -> None:
    """Write one mask, or a head stack of masks, with dtype code 2."""
    if isinstance(mask, BlockMask):
        save_bool_grid(mask.bits, path)
    else:
        save_bool_grid(np.stack([m.bits for m in mask]), path)


def load_mask(path: str | Path) -> list[BlockMask]:
    """Read masks written by :func:`save_mask`; a 2-D file yields one mask."""
    grid = load_bool_grid(path)
    if grid.ndim == 2:
        return [BlockMask(bits=grid)]
    if grid.ndim == 3:
        return [BlockMask(bits=g) for g in grid]
    raise MaskError(f"{path}: mask files must be 2-D or 3-D, got {grid.shape}")
