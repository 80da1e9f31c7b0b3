"""Similarity metrics between scoring patterns and dense attention."""

import logging
import math
from collections.abc import Sequence
from typing import Any, Optional

import numpy as np
from scipy.special import rel_entr
from scipy.stats import rankdata

from xattn.attention import attention_probabilities, n_blocks
from xattn.config import settings
from xattn.errors import (
    InvalidDistributionError,
    ShapeError,
    UndefinedCorrelationError,
)
from xattn.schemas import (
    AttentionInputs,
    BlockMask,
    PatternSimilarityRow,
    SelectionConfig,
)
from xattn.scoring import TileScorer
from xattn.selection import assemble_mask, block_probs, density, valid_block_grid

logger = logging.getLogger("xattn.metrics")

DISTRIBUTION_TOLERANCE = 1e-6

REPORT_METADATA: dict[str, Any] = {
    "js_log_base": "e",
    "js_upper_bound": math.log(2.0),
    "s_full": "dense post-softmax attention probabilities summed per block",
    "s_selected": "pattern tile probabilities (post-softmax) summed per block",
    "correlation": "spearman with average ranks over causally valid block pairs",
}


Vector = Sequence[float] | np.ndarray


def rank_correlation(a: Vector, b: Vector) -> float:
    """Spearman correlation: Pearson correlation of average-tie ranks.

    Raises:
        ShapeError: If lengths differ or fewer than two values are given.
        UndefinedCorrelationError: If either rank vector is constant.
    """
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 2:
        raise ShapeError(
            f"Need two equal-length vectors of n >= 2, got {x.size}, {y.size}"
        )

    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        raise UndefinedCorrelationError("Rank correlation of a constant vector")
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))


def _check_distribution(name: str, p: np.ndarray) -> None:
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidDistributionError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > DISTRIBUTION_TOLERANCE:
        raise InvalidDistributionError(f"{name} sums to {p.sum():.9f}, not 1")


def js_divergence(p: Vector, q: Vector) -> float:
    """Jensen-Shannon divergence in nats, bounded by ln 2.

    Raises:
        InvalidDistributionError: If either input is not a distribution or
            their lengths differ.
    """
    pv = np.asarray(p, dtype=np.float64).ravel()
    qv = np.asarray(q, dtype=np.float64).ravel()
    if pv.shape != qv.shape:
        raise InvalidDistributionError(f"Lengths differ: {pv.size} vs {qv.size}")
    _check_distribution("p", pv)
    _check_distribution("q", qv)

    m = 0.5 * (pv + qv)
    value = 0.5 * rel_entr(pv, m).sum() + 0.5 * rel_entr(qv, m).sum()
    return float(np.clip(value, 0.0, math.log(2.0)))


def block_sum_ground_truth(
    inp: AttentionInputs, block_size: int, chunk: Optional[int] = None
) -> np.ndarray:
    """Dense attention probabilities summed per (query block, key block)."""
    L, B = inp.length, block_size
    nb = n_blocks(L, B)
    step = max(B, (chunk or settings.XATTN_ATTENTION_CHUNK) // B * B)
    sums = np.zeros((nb, nb), dtype=np.float64)

    for start in range(0, L, step):
        stop = min(start + step, L)
        probs = np.zeros((stop - start, nb * B), dtype=np.float64)
        probs[:, :L] = attention_probabilities(inp, start, stop)
        per_block = probs.reshape(stop - start, nb, B).sum(axis=2)
        np.add.at(sums, np.arange(start, stop) // B, per_block)
    return sums


def _normalized(values: np.ndarray) -> np.ndarray:
    total = values.sum()
    if total <= 0:
        raise InvalidDistributionError("Cannot normalize a vector with no mass")
    return values / total


def pattern_similarity(
    inp: AttentionInputs,
    cfg: SelectionConfig,
    ground_truth: Optional[np.ndarray] = None,
) -> tuple[PatternSimilarityRow, BlockMask]:
    """Compare one pattern's block sums with the dense ground truth.

    Returns the report row and the mask the pattern selects at ``cfg.tau``.
    A rank correlation that is undefined (constant sums, or a single valid
    block pair when L <= B) is recorded as NaN.
    """
    if ground_truth is None:
        ground_truth = block_sum_ground_truth(inp, cfg.block_size)

    scorer = TileScorer(inp, cfg)
    probs: list[np.ndarray] = []
    selected_sums = np.zeros_like(ground_truth)
    for b in range(scorer.n_query_blocks):
        ts = scorer.score(b)
        p = block_probs(ts, cfg.block_size, cfg.stride)
        probs.append(p)
        selected_sums[b] = p * int(ts.row_valid.sum())

    mask = assemble_mask(probs, cfg, scorer.causal)
    valid = valid_block_grid(*ground_truth.shape, scorer.causal)
    s_sel, s_full = selected_sums[valid], ground_truth[valid]

    rho = math.nan
    if s_sel.size < 2:
        logger.warning(
            f"{cfg.pattern.value} S={cfg.stride}: one valid block pair; recording NaN"
        )
    else:
        try:
            rho = rank_correlation(s_sel, s_full)
        except UndefinedCorrelationError as e:
            logger.warning(f"{cfg.pattern.value} S={cfg.stride}: {e}; recording NaN")

    row = PatternSimilarityRow(
        pattern=cfg.pattern.value,
        stride=cfg.stride,
        rank_correlation=rho,
        js_divergence=js_divergence(_normalized(s_sel), _normalized(s_full)),
        density_at_tau=density(mask, scorer.causal),
    )
    return row, mask


def pattern_similarity_report(
    inp: AttentionInputs, configs: Sequence[SelectionConfig]
) -> tuple[list[PatternSimilarityRow], dict[str, Any]]:
    """One similarity row per config, measured on the same inputs.

    The metadata records which sums were compared and the JS log base.
    """
    truth: dict[int, np.ndarray] = {}
    rows = []
    for cfg in configs:
        if cfg.block_size not in truth:
            truth[cfg.block_size] = block_sum_ground_truth(inp, cfg.block_size)
        row, _ = pattern_similarity(inp, cfg, truth[cfg.block_size])
        rows.append(row)
        logger.debug(
            f"{row.pattern} S={row.stride}: rho={row.rank_correlation:.4f} "
            f"js={row.js_divergence:.5f} density={row.density_at_tau:.4f}"
        )
    return rows, dict(REPORT_METADATA)
