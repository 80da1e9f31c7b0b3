"""Block-sparse attention with a streaming softmax.

For every query block the selected key blocks are visited in ascending
order while a running row max, running normalizer and running output are
rescaled, so only one B×B score tile is alive at a time.
"""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from xattn.attention import causal_rows, n_blocks, score_scale
from xattn.errors import EmptyDistributionError, ShapeError
from xattn.schemas import AttentionInputs, BlockMask, ExecStats
from xattn.tensor import Tensor, matmul

logger = logging.getLogger("xattn.sparse")

NORM_FLOOR = 1e-12


def sparse_attention(
    inp: AttentionInputs, mask: BlockMask, block_size: int, workers: int = 1
) -> Tensor:
    """Exact attention restricted to the key blocks selected by ``mask``."""
    out, _ = sparse_attention_with_stats(inp, mask, block_size, workers)
    return out


def sparse_attention_with_stats(
    inp: AttentionInputs, mask: BlockMask, block_size: int, workers: int = 1
) -> tuple[Tensor, ExecStats]:
    """Sparse attention plus a count of the score entries actually computed.

    Raises:
        ShapeError: If the mask grid does not cover the sequence.
        EmptyDistributionError: If a query row has no permitted key.
    """
    L, B = inp.length, block_size
    nb = n_blocks(L, B)
    if mask.bits.shape != (nb, nb):
        raise ShapeError(
            f"Mask grid {mask.bits.shape} does not match {nb}×{nb} blocks "
            f"for L={L}, B={B}"
        )
    scale = score_scale(inp.d_h)

    def run(query_block: int) -> tuple[Tensor, int, int]:
        return _attend_block(inp, mask, B, scale, query_block)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(nb)))
    else:
        parts = [run(b) for b in range(nb)]

    out = np.concatenate([p[0] for p in parts], axis=0)
    stats = ExecStats(
        score_evaluations=sum(p[1] for p in parts),
        visited_blocks=sum(p[2] for p in parts),
    )
    logger.debug(
        f"Sparse attention L={L} B={B}: {stats.visited_blocks} blocks, "
        f"{stats.score_evaluations} score evaluations"
    )
    return out, stats


def _attend_block(
    inp: AttentionInputs,
    mask: BlockMask,
    B: int,
    scale: np.float32,
    query_block: int,
) -> tuple[Tensor, int, int]:
    L = inp.length
    r0, r1 = query_block * B, min((query_block + 1) * B, L)
    q = inp.q[r0:r1]
    rows = r1 - r0

    running_max = np.full(rows, -np.inf, dtype=np.float32)
    running_sum = np.zeros(rows, dtype=np.float32)
    acc = np.zeros((rows, inp.d_h), dtype=np.float32)
    evaluations = 0
    visited = 0

    for key_block in np.flatnonzero(mask.bits[query_block]):
        c0, c1 = int(key_block) * B, min((int(key_block) + 1) * B, L)
        if inp.causal and c0 > r1 - 1:
            continue

        scores = matmul(q, inp.k[c0:c1]) * scale
        if inp.causal and c1 - 1 > r0:
            allowed = causal_rows(r0, r1, c1)[:, c0:]
            scores = np.where(allowed, scores, np.float32(-np.inf))
            evaluations += int(allowed.sum())
        else:
            evaluations += scores.size
        visited += 1

        new_max = np.maximum(running_max, scores.max(axis=1))
        # rows with nothing permitted so far keep a finite reference
        shift = np.where(np.isfinite(new_max), new_max, np.float32(0.0))
        alpha = np.exp(running_max - shift)
        weights = np.exp(scores - shift[:, None])

        running_sum = running_sum * alpha + weights.sum(axis=1)
        acc = acc * alpha[:, None] + np.matmul(weights, inp.v[c0:c1])
        running_max = new_max

    empty = running_sum == 0
    if empty.any():
        row = r0 + int(np.flatnonzero(empty)[0])
        raise EmptyDistributionError(f"Query row {row} has no permitted key")

    return (acc / running_sum[:, None]).astype(np.float32), evaluations, visited


def output_error(sparse_out: Tensor, full_out: Tensor) -> float:
    """Mean over rows of ‖sparse − full‖₂ / max(‖full‖₂, 1e-12).

    Raises:
        ShapeError: If the outputs differ in shape.
    """
    if sparse_out.shape != full_out.shape:
        raise ShapeError(f"Shapes differ: {sparse_out.shape} vs {full_out.shape}")
    d = sparse_out.shape[-1]
    sparse_rows = np.asarray(sparse_out, dtype=np.float64).reshape(-1, d)
    full_rows = np.asarray(full_out, dtype=np.float64).reshape(-1, d)
    diff = np.linalg.norm(sparse_rows - full_rows, axis=1)
    ref = np.maximum(np.linalg.norm(full_rows, axis=1), NORM_FLOOR)
    return float(np.mean(diff / ref))
