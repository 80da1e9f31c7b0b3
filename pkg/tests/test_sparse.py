"""Tests for block-sparse execution."""

import statistics

import numpy as np
import pytest

from xattn.attention import dense_masked_attention, full_attention, n_blocks
from xattn.errors import EmptyDistributionError, ShapeError
from xattn.schemas import (
    AttentionInputs,
    BlockMask,
    SelectionConfig,
    Strategy,
    WorkloadKind,
    WorkloadSpec,
)
from xattn.selection import (
    assemble_mask,
    build_mask,
    density,
    score_block_probs,
    valid_block_grid,
)
from xattn.sparse import (
    output_error,
    sparse_attention,
    sparse_attention_with_stats,
)
from xattn.workloads import generate


def test_diagonal_only_mask_on_single_block_is_full_attention(make_inputs):
    """Test L=B with the one diagonal block against dense attention."""
    inp = make_inputs(length=16, d_h=8, seed=0)
    out = sparse_attention(inp, BlockMask(bits=[[True]]), 16)
    np.testing.assert_allclose(out, full_attention(inp), atol=1e-6)


@pytest.mark.parametrize("causal", [True, False])
def test_matches_dense_masked_attention(make_inputs, causal):
    """Test streaming softmax against the dense masked oracle."""
    inp = make_inputs(length=90, d_h=16, causal=causal, seed=1)
    rng = np.random.default_rng(2)
    nb = n_blocks(90, 16)
    bits = rng.random((nb, nb)) < 0.5
    bits &= valid_block_grid(nb, nb, causal)
    np.fill_diagonal(bits, True)
    mask = BlockMask(bits=bits)

    np.testing.assert_allclose(
        sparse_attention(inp, mask, 16),
        dense_masked_attention(inp, mask, 16),
        atol=1e-5,
    )


@pytest.mark.slow
def test_tau_one_pipeline_matches_full_attention():
    """Test oracle equivalence of the tau=1 pipeline over seeded workloads."""
    rng = np.random.default_rng(3)
    for case in range(50):
        length = int(rng.choice([64, 256, 1024]))
        d_h = int(rng.choice([16, 64]))
        causal = bool(case % 2)
        inp = AttentionInputs(
            q=rng.standard_normal((length, d_h)) / np.sqrt(d_h),
            k=rng.standard_normal((length, d_h)) / np.sqrt(d_h),
            v=rng.standard_normal((length, d_h)),
            causal=causal,
        )
        cfg = SelectionConfig(block_size=64, stride=8, tau=1.0)
        out = sparse_attention(inp, build_mask(inp, cfg), 64)
        assert output_error(out, full_attention(inp)) <= 1e-5


def test_rows_with_no_selected_key_raise(make_inputs):
    """Test that a query block whose only blocks are masked raises."""
    inp = make_inputs(length=32, d_h=8, causal=True, seed=4)
    mask = BlockMask(bits=[[False, True], [True, True]])
    with pytest.raises(EmptyDistributionError):
        sparse_attention(inp, mask, 16)


def test_mask_grid_must_cover_sequence(make_inputs):
    """Test that a mismatched grid raises ShapeError."""
    inp = make_inputs(length=32, d_h=8)
    with pytest.raises(ShapeError):
        sparse_attention(inp, BlockMask(bits=[[True]]), 16)


def test_score_evaluations_match_selected_work(make_inputs):
    """Test compute accounting against selected key counts with causal clipping."""
    inp = make_inputs(length=40, d_h=8, causal=True, seed=5)
    mask = BlockMask(
        bits=[[True, False, False], [True, True, False], [False, True, True]]
    )
    _, stats = sparse_attention_with_stats(inp, mask, 16)

    allowed = np.tril(np.ones((40, 40), dtype=bool))
    rows, cols = np.arange(40) // 16, np.arange(40) // 16
    expected = int((allowed & mask.bits[rows][:, cols]).sum())
    assert stats.score_evaluations == expected
    assert stats.visited_blocks == mask.selected_count


def test_parallel_blocks_match_serial(make_inputs):
    """Test that worker threads give identical outputs."""
    inp = make_inputs(length=150, d_h=16, seed=6)
    mask = build_mask(inp, SelectionConfig(block_size=32, stride=8, tau=0.8))
    assert np.array_equal(
        sparse_attention(inp, mask, 32), sparse_attention(inp, mask, 32, workers=3)
    )


def test_output_error():
    """Test zero error, relative scaling and the norm floor."""
    full = np.array([[3.0, 4.0], [0.0, 0.0]], dtype=np.float32)
    assert output_error(full, full) == 0.0
    sparse = np.array([[3.0, 4.0], [0.0, 1e-12]], dtype=np.float32)
    assert output_error(sparse, full) == pytest.approx(0.5, rel=1e-4)
    with pytest.raises(ShapeError):
        output_error(full, full[:1])


def _mixed_workloads(count=20):
    kinds = list(WorkloadKind)
    inputs = []
    for seed in range(count):
        spec = WorkloadSpec(
            kind=kinds[seed % len(kinds)],
            length=512,
            d_h=64,
            seed=seed,
            columns=[70],
            offset=101,
            window=64,
            sinks=4,
            width=64,
        )
        inputs.extend(generate(spec))
    return inputs


@pytest.mark.slow
def test_error_shrinks_as_tau_grows():
    """Test density and median output error over increasing thresholds."""
    cfg = SelectionConfig(block_size=64, stride=8)
    taus = (0.5, 0.7, 0.9, 1.0)
    errors = {tau: [] for tau in taus}
    for inp in _mixed_workloads():
        probs = score_block_probs(inp, cfg)
        full = full_attention(inp)
        densities = []
        for tau in taus:
            mask = assemble_mask(probs, cfg, inp.causal, tau=tau)
            densities.append(density(mask, inp.causal))
            errors[tau].append(output_error(sparse_attention(inp, mask, 64), full))
        assert densities == sorted(densities)

    medians = [statistics.median(errors[tau]) for tau in taus]
    for looser, tighter in zip(medians, medians[1:]):
        assert tighter <= looser + 1e-6


def _smallest_matching(configs, probs, inp, target):
    for cfg in configs:
        mask = assemble_mask(probs, cfg, inp.causal)
        if density(mask, inp.causal) >= target:
            return mask
    return mask


@pytest.mark.slow
def test_threshold_beats_fixed_budgets_at_matched_density():
    """Test that tau=0.9 errs no more than Top-K or Top-Ratio of equal density."""
    cfg = SelectionConfig(block_size=64, stride=8, tau=0.9)
    topk = [
        cfg.model_copy(update={"strategy": Strategy.TOPK, "top_k": k})
        for k in range(1, 9)
    ]
    topratio = [
        cfg.model_copy(update={"strategy": Strategy.TOPRATIO, "top_ratio": r / 100})
        for r in range(1, 101)
    ]
    errors = {Strategy.THRESHOLD: [], Strategy.TOPK: [], Strategy.TOPRATIO: []}
    for inp in _mixed_workloads():
        probs = score_block_probs(inp, cfg)
        full = full_attention(inp)
        mask = assemble_mask(probs, cfg, inp.causal)
        target = density(mask, inp.causal) - 0.02
        masks = {
            Strategy.THRESHOLD: mask,
            Strategy.TOPK: _smallest_matching(topk, probs, inp, target),
            Strategy.TOPRATIO: _smallest_matching(topratio, probs, inp, target),
        }
        for strategy, m in masks.items():
            out = sparse_attention(inp, m, 64)
            errors[strategy].append(output_error(out, full))

    threshold = statistics.median(errors[Strategy.THRESHOLD])
    assert threshold <= statistics.median(errors[Strategy.TOPK]) + 1e-6
    assert threshold <= statistics.median(errors[Strategy.TOPRATIO]) + 1e-6
