"""Data models shared across the package."""

import math
from enum import Enum
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from xattn.errors import ShapeError
from xattn.tensor import BoolGrid, Tensor, as_tensor


class Pattern(str, Enum):
    """Sampling pattern used to score each S×S tile."""
    ANTIDIAGONAL = "antidiagonal"
    DIAGONAL = "diagonal"
    RANDOM = "random"
    FULLSUM = "fullsum"


class Strategy(str, Enum):
    """Rule turning block probabilities into a selected block set."""
    THRESHOLD = "threshold"
    TOPK = "topk"
    TOPRATIO = "topratio"


class SelectionConfig(BaseModel):
    """Block size, stride, threshold and selection policy.

    ``causal=None`` follows the flag carried by the attention inputs.
    """
    model_config = ConfigDict(frozen=True)

    block_size: int = Field(default=128, ge=1)
    stride: int = Field(default=8, ge=1)
    tau: float = Field(default=0.9, gt=0.0, le=1.0)
    strategy: Strategy = Strategy.THRESHOLD
    top_k: int = Field(default=8, ge=1)
    top_ratio: float = Field(default=0.27, gt=0.0, le=1.0)
    pattern: Pattern = Pattern.ANTIDIAGONAL
    pattern_seed: int = 0
    causal: Optional[bool] = None
    force_diagonal_block: bool = True
    force_first_block: bool = False

    @model_validator(mode="after")
    def _stride_divides_block(self) -> "SelectionConfig":
        if self.block_size % self.stride != 0:
            raise ValueError(
                f"stride {self.stride} must divide block size {self.block_size}"
            )
        return self

    @property
    def tiles_per_block(self) -> int:
        return self.block_size // self.stride

    def with_tau(self, tau: float) -> "SelectionConfig":
        """Copy of this config with another threshold."""
        return SelectionConfig(**{**self.model_dump(), "tau": tau})


class AttentionInputs(BaseModel):
    """Query, key and value matrices of one head."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    causal: bool = True
    head: int = Field(default=0, ge=0)

    @field_validator("q", "k", "v", mode="before")
    @classmethod
    def _to_tensor(cls, value: Any) -> Tensor:
        return as_tensor(value)

    @model_validator(mode="after")
    def _shapes_agree(self) -> "AttentionInputs":
        if self.q.ndim != 2:
            raise ShapeError(f"Q must be L×d_h, got {self.q.shape}")
        if self.k.shape != self.q.shape or self.v.shape != self.q.shape:
            raise ShapeError(
                f"Q, K, V must share L and d_h: {self.q.shape}, "
                f"{self.k.shape}, {self.v.shape}"
            )
        return self

    @property
    def length(self) -> int:
        return int(self.q.shape[0])

    @property
    def d_h(self) -> int:
        return int(self.q.shape[1])


class TileScoreMap(BaseModel):
    """Tile scores of one query block.

    ``raw`` holds scaled tile sums, ``prob`` their row-wise softmax over
    unmasked key tiles. ``row_valid`` marks tile rows that hold at least one
    real query; invalid rows have all-zero ``prob``.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    query_block_index: int = Field(ge=0)
    raw: np.ndarray
    prob: np.ndarray
    tile_mask: np.ndarray
    row_valid: np.ndarray


class BlockMask(BaseModel):
    """Boolean grid over (query block, key block) pairs."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    bits: np.ndarray

    @field_validator("bits", mode="before")
    @classmethod
    def _to_grid(cls, value: Any) -> BoolGrid:
        grid = np.ascontiguousarray(value, dtype=bool)
        if grid.ndim != 2 or 0 in grid.shape:
            raise ShapeError(
                f"Block mask must be a non-empty 2-D grid, got {grid.shape}"
            )
        return grid

    @property
    def n_query_blocks(self) -> int:
        return int(self.bits.shape[0])

    @property
    def n_key_blocks(self) -> int:
        return int(self.bits.shape[1])

    @property
    def selected_count(self) -> int:
        return int(self.bits.sum())


class ExecStats(BaseModel):
    """Work done by one sparse attention call."""
    score_evaluations: int = 0
    visited_blocks: int = 0


class HeadThresholds(BaseModel):
    """Per-head thresholds after geometric reductions of ``t_init``."""
    t_init: float = Field(gt=0.0, le=1.0)
    step_counts: list[int]
    decay: float = Field(default=0.9, gt=0.0, lt=1.0)

    @field_validator("step_counts")
    @classmethod
    def _non_negative(cls, value: list[int]) -> list[int]:
        if any(s < 0 for s in value):
            raise ValueError("step counts must be non-negative")
        return value

    @property
    def t(self) -> list[float]:
        return [self.t_init * self.decay**s for s in self.step_counts]

    @property
    def mean(self) -> float:
        return float(np.mean(self.t)) if self.step_counts else math.nan


class DPState(BaseModel):
    """Dynamic-programming table of the minimum-threshold search.

    ``table[h][m]`` is the best performance with exactly ``m`` reductions
    spread over the first ``h`` heads; ``choice[h][m]`` is the step-count
    vector that reached it (``None`` when unreachable).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    table: np.ndarray
    choice: list[list[Optional[tuple[int, ...]]]]
    t_init: float
    steps: int = Field(ge=1)


class WorkloadKind(str, Enum):
    """Planted attention structure of a synthetic workload."""
    GAUSSIAN = "gaussian"
    VERTICAL = "vertical"
    SLASH = "slash"
    SINK_RECENT = "sink_recent"
    BLOCK_LOCAL = "block_local"


class WorkloadSpec(BaseModel):
    """Recipe for a deterministic synthetic workload."""
    kind: WorkloadKind = WorkloadKind.GAUSSIAN
    length: int = Field(ge=1)
    d_h: int = Field(default=64, ge=1)
    heads: int = Field(default=1, ge=1)
    seed: int = 0
    causal: bool = True
    columns: list[int] = Field(default_factory=list)
    strength: float = Field(default=10.0, gt=0.0)
    offset: int = Field(default=0, ge=0)
    window: int = Field(default=1, ge=1)
    sinks: int = Field(default=1, ge=1)
    width: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _planted_in_range(self) -> "WorkloadSpec":
        L = self.length
        if self.kind == WorkloadKind.VERTICAL:
            if not self.columns:
                raise ValueError("vertical workloads need at least one column")
            if any(not 0 <= c < L for c in self.columns):
                raise ValueError(f"planted columns must lie in [0, {L})")
        if self.kind == WorkloadKind.SLASH and self.offset >= L:
            raise ValueError(f"slash offset must lie in [0, {L})")
        if self.kind == WorkloadKind.SINK_RECENT:
            if self.window > L or self.sinks > L:
                raise ValueError(f"window and sinks must lie in [1, {L}]")
        if self.kind == WorkloadKind.BLOCK_LOCAL and self.width > L:
            raise ValueError(f"width must lie in [1, {L}]")
        return self


class BenchRecord(BaseModel):
    """One row of the timing benchmark CSV."""
    L: int
    B: int
    S: int
    tau: float
    pattern: str
    strategy: str
    head: int
    density: float = Field(ge=0.0, le=1.0)
    select_time_ns: int
    attend_time_ns: int
    full_time_ns: int
    speedup: float
    output_error: float
    seed: int
    threads: int


class AblationRecord(BaseModel):
    """One row of the ablation grid CSV."""
    L: int
    B: int
    S: int
    tau: float
    pattern: str
    strategy: str
    head: int
    rank_correlation: float
    js_divergence: float
    density: float
    output_error: float
    seed: int


class PatternSimilarityRow(BaseModel):
    """Similarity of one scoring pattern to the dense ground truth."""
    pattern: str
    stride: int
    rank_correlation: float
    js_divergence: float
    density_at_tau: float


class DensityRecord(BaseModel):
    """Mean density at one (context length, stride) point."""
    L: int
    B: int
    S: int
    tau: float
    pattern: str
    strategy: str
    heads: int
    density: float
    seed: int


class CalibrationResult(BaseModel):
    """Persisted outcome of threshold calibration."""
    t_init: float
    epsilon: float
    thresholds: list[float]
    step_counts: list[int]
    baseline_perf: float
    final_perf: float

    @model_validator(mode="after")
    def _lengths_match(self) -> "CalibrationResult":
        if len(self.thresholds) != len(self.step_counts):
            raise ValueError("thresholds and step_counts differ in length")
        return self
