"""Per-head minimum-threshold prediction.

Starting from ``t_init`` for every head, each adjustment multiplies one
head's threshold by 0.9. ``D[h][m]`` holds the best performance reachable
with exactly ``m`` adjustments spread over the first ``h`` heads:

    D[h][m] = max(D[h-1][m], P(h, m))

where ``P(h, m)`` evaluates the state of ``D[h-1][m-k]`` with head ``h``
reduced ``k`` more times, ``k = 1..m``. ``k = 1`` is the single-step
transition from ``D[h-1][m-1]``; larger ``k`` lets one head absorb repeated
reductions. The answer is the state with the most adjustments whose
performance stays within ``epsilon`` of the unreduced baseline.
"""

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from xattn.attention import full_attention
from xattn.config import settings
from xattn.errors import CalibrationError
from xattn.schemas import (
    AttentionInputs,
    BlockMask,
    CalibrationResult,
    DPState,
    HeadThresholds,
    SelectionConfig,
)
from xattn.selection import assemble_mask, density, score_block_probs
from xattn.sparse import output_error, sparse_attention
from xattn.reporting import write_json

logger = logging.getLogger("xattn.calibrate")

DECAY = 0.9

Evaluator = Callable[[Sequence[float]], float]
Steps = tuple[int, ...]


def thresholds_for(
    steps: Sequence[int], t_init: float, decay: float = DECAY
) -> list[float]:
    """Thresholds after ``steps[h]`` reductions of head ``h``."""
    return [t_init * decay**s for s in steps]


def build_dp_table(
    evaluator: Evaluator,
    heads: int,
    steps: int,
    t_init: float,
    decay: float = DECAY,
    workers: int = 1,
) -> DPState:
    """Fill the (heads+1)×(steps+1) performance table.

    Raises:
        CalibrationError: If the evaluator returns a non-finite value.
    """
    if heads < 1 or steps < 1:
        raise CalibrationError(
            f"Need heads >= 1 and steps >= 1, got {heads}, {steps}"
        )
    if not 0.0 < t_init <= 1.0:
        raise CalibrationError(f"t_init must lie in (0, 1], got {t_init}")

    cache: dict[Steps, float] = {}

    def evaluate(state: Steps) -> float:
        value = float(evaluator(thresholds_for(state, t_init, decay)))
        if not math.isfinite(value):
            raise CalibrationError(f"Evaluator returned {value} for steps {state}")
        return value

    def perf(state: Steps) -> float:
        if state not in cache:
            cache[state] = evaluate(state)
        return cache[state]

    table = np.full((heads + 1, steps + 1), -np.inf)
    choice: list[list[Optional[Steps]]] = [
        [None] * (steps + 1) for _ in range(heads + 1)
    ]
    zero: Steps = (0,) * heads
    baseline = perf(zero)
    for h in range(heads + 1):
        table[h][0] = baseline
        choice[h][0] = zero

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for h in range(1, heads + 1):
            for m in range(1, steps + 1):
                best, best_state = table[h - 1][m], choice[h - 1][m]

                candidates = []
                for k in range(1, m + 1):
                    prev = choice[h - 1][m - k]
                    if prev is None:
                        continue
                    state = list(prev)
                    state[h - 1] += k
                    candidates.append(tuple(state))

                if pool is not None:
                    # warm the cache in parallel, then read in order
                    fresh = [c for c in candidates if c not in cache]
                    cache.update(zip(fresh, pool.map(evaluate, fresh)))

                for state in candidates:
                    value = perf(state)
                    if value > best:
                        best, best_state = value, state

                table[h][m] = best
                choice[h][m] = best_state
            logger.debug(f"DP row {h}/{heads}: {table[h].tolist()}")
    finally:
        if pool is not None:
            pool.shutdown()

    logger.info(f"Threshold DP evaluated {len(cache)} distinct states")
    return DPState(table=table, choice=choice, t_init=t_init, steps=steps)


def pick_state(state: DPState, epsilon: float) -> tuple[int, Steps]:
    """Largest ``m`` with ``D[H][m] >= D[H][0] - epsilon`` and its step counts."""
    last = state.table[-1]
    floor = last[0] - epsilon
    for m in range(state.steps, -1, -1):
        chosen = state.choice[-1][m]
        if chosen is not None and last[m] >= floor:
            return m, chosen
    raise CalibrationError("No DP state reaches the baseline")


def predict_min_thresholds(
    evaluator: Evaluator,
    heads: int,
    steps: int,
    t_init: float = 0.9,
    epsilon: Optional[float] = None,
    workers: int = 1,
) -> HeadThresholds:
    """Per-head thresholds with the most reductions at bounded performance loss."""
    result = calibrate_thresholds(evaluator, heads, steps, t_init, epsilon, workers)
    return HeadThresholds(t_init=t_init, step_counts=result.step_counts)


def calibrate_thresholds(
    evaluator: Evaluator,
    heads: int,
    steps: int,
    t_init: float = 0.9,
    epsilon: Optional[float] = None,
    workers: int = 1,
) -> CalibrationResult:
    """Run the DP and package the chosen state with its performance."""
    eps = settings.XATTN_CALIBRATION_EPSILON if epsilon is None else epsilon
    if eps < 0:
        raise CalibrationError(f"epsilon must be >= 0, got {eps}")

    state = build_dp_table(evaluator, heads, steps, t_init, workers=workers)
    m, chosen = pick_state(state, eps)
    result = CalibrationResult(
        t_init=t_init,
        epsilon=eps,
        thresholds=thresholds_for(chosen, t_init),
        step_counts=list(chosen),
        baseline_perf=float(state.table[-1][0]),
        final_perf=float(state.table[-1][m]),
    )
    logger.info(
        f"Calibrated {heads} heads with {m} reductions: mean threshold "
        f"{np.mean(result.thresholds):.4f}, perf {result.final_perf:.6f} "
        f"(baseline {result.baseline_perf:.6f})"
    )
    return result


class FidelityEvaluator:
    """Negative mean output error of sparse attention under per-head thresholds.

    Block probabilities and dense outputs are computed once; a threshold
    only changes the block sets, so errors are cached per (workload, head,
    threshold).
    """

    def __init__(
        self,
        workloads: Sequence[Sequence[AttentionInputs]],
        cfg: SelectionConfig,
        workers: int = 1,
    ):
        if not workloads or not workloads[0]:
            raise CalibrationError("Calibration needs a workload with heads")
        self.heads = len(workloads[0])
        if any(len(w) != self.heads for w in workloads):
            raise CalibrationError("Calibration workloads differ in head count")

        self.workloads = workloads
        self.cfg = cfg
        self.workers = workers
        self._probs = [
            [score_block_probs(inp, cfg, workers) for inp in w] for w in workloads
        ]
        self._full = [[full_attention(inp) for inp in w] for w in workloads]
        self._errors: dict[tuple[int, int, float], float] = {}

    def mask_for(self, workload: int, head: int, tau: float) -> BlockMask:
        inp = self.workloads[workload][head]
        probs = self._probs[workload][head]
        return assemble_mask(probs, self.cfg, inp.causal, tau=tau)

    def head_error(self, workload: int, head: int, tau: float) -> float:
        key = (workload, head, tau)
        if key not in self._errors:
            inp = self.workloads[workload][head]
            mask = self.mask_for(workload, head, tau)
            out = sparse_attention(inp, mask, self.cfg.block_size, self.workers)
            self._errors[key] = output_error(out, self._full[workload][head])
        return self._errors[key]

    def __call__(self, thresholds: Sequence[float]) -> float:
        if len(thresholds) != self.heads:
            raise CalibrationError(
                f"Expected {self.heads} thresholds, got {len(thresholds)}"
            )
        errors = [
            self.head_error(w, h, float(thresholds[h]))
            for w in range(len(self.workloads))
            for h in range(self.heads)
        ]
        return -float(np.mean(errors))

    def mean_density(self, thresholds: Sequence[float]) -> float:
        """Mean mask density over workloads and heads."""
        return float(
            np.mean(
                [
                    density(self.mask_for(w, h, float(thresholds[h])), inp.causal)
                    for w, heads in enumerate(self.workloads)
                    for h, inp in enumerate(heads)
                ]
            )
        )


def fidelity_evaluator(
    workloads: Sequence[Sequence[AttentionInputs]],
    cfg: SelectionConfig,
    workers: int = 1,
) -> FidelityEvaluator:
    """Build the output-fidelity evaluator for a calibration set."""
    return FidelityEvaluator(workloads, cfg, workers)


def save_calibration(result: CalibrationResult, path: str | Path) -> None:
    """Write a calibration result as JSON."""
    write_json(path, result)


def load_calibration(path: str | Path) -> CalibrationResult:
    """Read a calibration result written by :func:`save_calibration`."""
    text = Path(path).read_text(encoding="utf-8")
    return CalibrationResult.model_validate_json(text)
