"""Exact dense attention and its block-masked simulation.

These are the reference outputs every sparse result is checked against.
Rows are processed in chunks so the L×L score map never has to exist at
once; chunking does not change per-row results.
"""

import logging
import math
from typing import Optional

import numpy as np

from xattn.config import settings
from xattn.errors import ShapeError
from xattn.schemas import AttentionInputs, BlockMask
from xattn.tensor import BoolGrid, Tensor, matmul, softmax_rows

logger = logging.getLogger("xattn.attention")


def n_blocks(length: int, block_size: int) -> int:
    """Number of blocks covering ``length`` tokens."""
    return -(-length // block_size)


def score_scale(d_h: int) -> np.float32:
    """1/√d_h as float32."""
    return np.float32(1.0 / math.sqrt(d_h))


def causal_rows(row_start: int, row_stop: int, n_cols: int) -> BoolGrid:
    """Causal permission for query rows [row_start, row_stop): key j <= row i."""
    rows = np.arange(row_start, row_stop)[:, None]
    cols = np.arange(n_cols)[None, :]
    return cols <= rows


def expand_block_rows(
    mask: BlockMask, block_size: int, row_start: int, row_stop: int, length: int
) -> BoolGrid:
    """Element-level permission for query rows taken from a block mask."""
    row_blocks = np.arange(row_start, row_stop) // block_size
    col_blocks = np.arange(length) // block_size
    return mask.bits[row_blocks][:, col_blocks]


def full_attention(inp: AttentionInputs, chunk: Optional[int] = None) -> Tensor:
    """Exact attention: softmax(QKᵀ/√d_h, causal mask) · V."""
    return _attention(inp, None, 0, chunk)


def dense_masked_attention(
    inp: AttentionInputs,
    mask: BlockMask,
    block_size: int,
    chunk: Optional[int] = None,
) -> Tensor:
    """Dense attention with unselected blocks masked out before the softmax.

    Causality is applied per element inside permitted blocks.

    Raises:
        ShapeError: If the mask grid does not cover the sequence.
        EmptyDistributionError: If a query row keeps no permitted key.
    """
    expected = n_blocks(inp.length, block_size)
    if mask.bits.shape != (expected, expected):
        raise ShapeError(
            f"Mask grid {mask.bits.shape} does not match {expected}×{expected} "
            f"blocks for L={inp.length}, B={block_size}"
        )
    return _attention(inp, mask, block_size, chunk)


def attention_probabilities(
    inp: AttentionInputs, row_start: int, row_stop: int
) -> Tensor:
    """Dense softmax probabilities for a range of query rows."""
    scores = matmul(inp.q[row_start:row_stop], inp.k) * score_scale(inp.d_h)
    return softmax_rows(scores, _permitted(inp, None, 0, row_start, row_stop))


def _permitted(
    inp: AttentionInputs,
    mask: Optional[BlockMask],
    block_size: int,
    row_start: int,
    row_stop: int,
) -> BoolGrid:
    L = inp.length
    if inp.causal:
        permitted = causal_rows(row_start, row_stop, L)
    else:
        permitted = np.ones((row_stop - row_start, L), dtype=bool)
    if mask is not None:
        permitted &= expand_block_rows(mask, block_size, row_start, row_stop, L)
    return permitted


def _attention(
    inp: AttentionInputs,
    mask: Optional[BlockMask],
    block_size: int,
    chunk: Optional[int],
) -> Tensor:
    L = inp.length
    step = chunk or settings.XATTN_ATTENTION_CHUNK
    scale = score_scale(inp.d_h)
    out = np.empty_like(inp.v)

    for start in range(0, L, step):
        stop = min(start + step, L)
        scores = matmul(inp.q[start:stop], inp.k) * scale
        probs = softmax_rows(scores, _permitted(inp, mask, block_size, start, stop))
        out[start:stop] = np.matmul(probs, inp.v)

    logger.debug(f"Dense attention over L={L} (masked={mask is not None})")
    return out
