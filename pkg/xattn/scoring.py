"""Tile importance scores from strided sampling patterns.

Each S×S tile of the attention-score map is summarized by S of its entries.
The antidiagonal pattern takes the entries with (i mod S)+(j mod S) = S−1:
query slices are interleaved in reverse and key slices forward, so one
matmul of the reshaped matrices yields every tile's antidiagonal sum.
The diagonal and random patterns use other pairings of the same slices;
fullsum pools the whole tile.
"""

import logging
import math
from collections.abc import Iterable

import numpy as np

from xattn.attention import n_blocks
from xattn.errors import ConfigError, ShapeError
from xattn.schemas import AttentionInputs, Pattern, SelectionConfig, TileScoreMap
from xattn.tensor import BoolGrid, Tensor, matmul, softmax_rows

logger = logging.getLogger("xattn.scoring")

BASELINE_PATTERNS = (Pattern.DIAGONAL, Pattern.RANDOM, Pattern.FULLSUM)


def padded_length(length: int, stride: int) -> int:
    """Smallest multiple of ``stride`` that is >= ``length``."""
    return stride * -(-length // stride)


def resolve_causal(inp: AttentionInputs, cfg: SelectionConfig) -> bool:
    """Causal flag shared by inputs and config.

    Raises:
        ConfigError: If the config pins a flag the inputs disagree with.
    """
    if cfg.causal is not None and cfg.causal != inp.causal:
        raise ConfigError(
            f"Config causal={cfg.causal} disagrees with inputs causal={inp.causal}"
        )
    return inp.causal


def pattern_pairing(
    pattern: Pattern, stride: int, seed: int = 0, head: int = 0, block: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Query and key offsets paired inside each tile.

    Pair ``t`` multiplies query offset ``q_order[t]`` with key offset
    ``k_order[t]``. The random pairing is a permutation drawn from a
    generator keyed by (seed, head, block), shared by every tile of that
    query block.
    """
    forward = np.arange(stride)
    if pattern == Pattern.ANTIDIAGONAL:
        return forward[::-1].copy(), forward
    if pattern == Pattern.DIAGONAL:
        return forward, forward
    if pattern == Pattern.RANDOM:
        rng = np.random.default_rng([seed, head, block])
        return forward, rng.permutation(stride)
    raise ConfigError(f"Pattern {pattern.value} has no element pairing")


def pattern_positions(
    pattern: Pattern, stride: int, seed: int = 0, head: int = 0, block: int = 0
) -> set[tuple[int, int]]:
    """In-tile (row, column) positions a pattern samples."""
    if pattern == Pattern.FULLSUM:
        return {(i, j) for i in range(stride) for j in range(stride)}
    q_order, k_order = pattern_pairing(pattern, stride, seed, head, block)
    return {(int(i), int(j)) for i, j in zip(q_order, k_order)}


def pattern_coverage_check(positions: Iterable[tuple[int, int]], stride: int) -> bool:
    """True iff every tile row and every tile column is sampled."""
    cells = list(positions)
    rows = {i for i, _ in cells}
    cols = {j for _, j in cells}
    full = set(range(stride))
    return rows >= full and cols >= full


def pattern_tile_sums(
    score_map: Tensor, positions: Iterable[tuple[int, int]], stride: int
) -> Tensor:
    """Sum the sampled entries of every S×S tile of a dense score map.

    The map is zero-padded to multiples of ``stride`` on both axes.
    """
    rows, cols = score_map.shape
    padded = np.zeros(
        (padded_length(rows, stride), padded_length(cols, stride)), dtype=np.float64
    )
    padded[:rows, :cols] = score_map
    selected = np.zeros((stride, stride), dtype=bool)
    for i, j in positions:
        selected[i, j] = True
    tiles = padded.reshape(padded.shape[0] // stride, stride, -1, stride)
    return np.einsum("aibj,ij->ab", tiles, selected.astype(np.float64))


class TileScorer:
    """Scores query blocks of one head under one selection config.

    Key slices are reshaped once; each call to :meth:`score` handles one
    query block.
    """

    def __init__(self, inp: AttentionInputs, cfg: SelectionConfig):
        self.inp = inp
        self.cfg = cfg
        self.causal = resolve_causal(inp, cfg)

        S, B = cfg.stride, cfg.block_size
        L, d = inp.length, inp.d_h
        self.n_query_blocks = n_blocks(L, B)
        self.n_key_tiles = padded_length(L, S) // S

        self._q = np.zeros((self.n_query_blocks * B, d), dtype=np.float32)
        self._q[:L] = inp.q
        self._k_tiles = np.zeros((self.n_key_tiles * S, d), dtype=np.float32)
        self._k_tiles[:L] = inp.k
        self._k_tiles = self._k_tiles.reshape(self.n_key_tiles, S, d)

        if cfg.pattern == Pattern.FULLSUM:
            self.scale = np.float32(1.0 / (math.sqrt(d) * S * S))
            self._k_reshaped = self._k_tiles.sum(axis=1)
        else:
            self.scale = np.float32(1.0 / (math.sqrt(d) * S))
            self._k_reshaped = None
            if cfg.pattern != Pattern.RANDOM:
                _, k_order = pattern_pairing(cfg.pattern, S)
                self._k_reshaped = self._interleave(self._k_tiles, k_order)

    @staticmethod
    def _interleave(tiles: np.ndarray, order: np.ndarray) -> Tensor:
        """Concatenate the strided slices of each tile in ``order``."""
        n, S, d = tiles.shape
        return np.ascontiguousarray(tiles[:, order, :].reshape(n, S * d))

    def tile_mask(self, block: int) -> tuple[BoolGrid, BoolGrid]:
        """Permitted key tiles per tile row, and which tile rows hold queries."""
        S, B = self.cfg.stride, self.cfg.block_size
        row_start = block * B + np.arange(self.cfg.tiles_per_block) * S
        row_valid = row_start < self.inp.length
        mask = np.repeat(row_valid[:, None], self.n_key_tiles, axis=1)
        if self.causal:
            key_start = np.arange(self.n_key_tiles) * S
            # drop tiles whose every element lies strictly in the future
            mask &= key_start[None, :] <= (row_start + S - 1)[:, None]
        return mask, row_valid

    def raw_scores(self, block: int) -> Tensor:
        """Scaled tile sums for one query block, shape (B/S)×(L_pad/S)."""
        cfg = self.cfg
        S, B, d = cfg.stride, cfg.block_size, self.inp.d_h
        q_tiles = self._q[block * B : (block + 1) * B].reshape(-1, S, d)

        if cfg.pattern == Pattern.FULLSUM:
            return matmul(q_tiles.sum(axis=1), self._k_reshaped) * self.scale

        q_order, k_order = pattern_pairing(
            cfg.pattern, S, cfg.pattern_seed, self.inp.head, block
        )
        k_reshaped = self._k_reshaped
        if k_reshaped is None:
            k_reshaped = self._interleave(self._k_tiles, k_order)
        return matmul(self._interleave(q_tiles, q_order), k_reshaped) * self.scale

    def score(self, block: int) -> TileScoreMap:
        """Tile scores and row-normalized probabilities of one query block."""
        if not 0 <= block < self.n_query_blocks:
            raise ShapeError(
                f"Query block {block} out of range [0, {self.n_query_blocks})"
            )
        raw = self.raw_scores(block)
        mask, row_valid = self.tile_mask(block)

        prob = np.zeros_like(raw)
        if row_valid.any():
            prob[row_valid] = softmax_rows(raw[row_valid], mask[row_valid])

        return TileScoreMap(
            query_block_index=block,
            raw=raw,
            prob=prob,
            tile_mask=mask,
            row_valid=row_valid,
        )


def antidiagonal_tile_scores(
    inp: AttentionInputs, cfg: SelectionConfig, block: int
) -> TileScoreMap:
    """Antidiagonal tile scores of one query block.

    Raises:
        ConfigError: If ``cfg.pattern`` is not antidiagonal.
        ShapeError: If ``block`` is out of range.
    """
    if cfg.pattern != Pattern.ANTIDIAGONAL:
        raise ConfigError(f"Expected antidiagonal pattern, got {cfg.pattern.value}")
    return TileScorer(inp, cfg).score(block)


def baseline_tile_scores(
    inp: AttentionInputs, cfg: SelectionConfig, block: int
) -> TileScoreMap:
    """Diagonal, random or fullsum tile scores of one query block.

    Raises:
        ConfigError: If ``cfg.pattern`` is not a baseline pattern.
        ShapeError: If ``block`` is out of range.
    """
    if cfg.pattern not in BASELINE_PATTERNS:
        raise ConfigError(f"Expected a baseline pattern, got {cfg.pattern.value}")
    return TileScorer(inp, cfg).score(block)


def tile_scores(inp: AttentionInputs, cfg: SelectionConfig, block: int) -> TileScoreMap:
    """Tile scores of one query block under whichever pattern ``cfg`` names."""
    return TileScorer(inp, cfg).score(block)
