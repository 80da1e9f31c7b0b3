"""Tests for tensor primitives and the XATN format."""

import struct

import numpy as np
import pytest

from xattn.errors import EmptyDistributionError, ShapeError, TensorFormatError
from xattn.tensor import (
    MAGIC,
    as_tensor,
    atomic_write_bytes,
    load_bool_grid,
    load_tensor,
    matmul,
    save_bool_grid,
    save_tensor,
    softmax_rows,
)


def test_matmul_small_case():
    """Test matmul against a hand-computed product of a and bᵀ."""
    a = as_tensor([[1, 2], [3, 4]])
    b_t = as_tensor([[5, 6], [7, 8]])
    assert np.array_equal(matmul(a, b_t), np.array([[17, 23], [39, 53]], np.float32))


def test_matmul_rejects_mismatched_inner_extent():
    """Test that differing inner extents raise ShapeError."""
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3), np.float32), np.ones((2, 4), np.float32))


def test_matmul_is_repeatable():
    """Test that two identical calls agree bit for bit."""
    rng = np.random.default_rng(1)
    a = as_tensor(rng.standard_normal((33, 17)))
    b = as_tensor(rng.standard_normal((29, 17)))
    assert np.array_equal(matmul(a, b), matmul(a, b))


def test_softmax_rows_examples():
    """Test the uniform row and the masked row."""
    uniform = softmax_rows(as_tensor([[0, 0, 0, 0]]))
    np.testing.assert_allclose(uniform, [[0.25] * 4], atol=1e-7)

    masked = softmax_rows(
        as_tensor([[1, 2, 3]]), np.array([[True, True, False]])
    )
    assert masked[0, 2] == 0.0
    np.testing.assert_allclose(masked[0, :2], [0.26894142, 0.73105858], atol=1e-6)


def test_softmax_rows_sum_to_one_and_ignore_masked_values():
    """Test normalization and that masked entries never influence a row."""
    rng = np.random.default_rng(2)
    scores = as_tensor(rng.standard_normal((8, 12)) * 5)
    mask = rng.random((8, 12)) > 0.4
    mask[:, 0] = True
    probs = softmax_rows(scores, mask)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    perturbed = scores.copy()
    perturbed[~mask] = 1e4
    assert np.array_equal(softmax_rows(perturbed, mask), probs)


def test_softmax_rows_fully_masked_row():
    """Test that a row without permitted entries raises."""
    with pytest.raises(EmptyDistributionError):
        softmax_rows(as_tensor([[1, 2]]), np.array([[False, False]]))


def _naive_product(a, b_t):
    m, k = a.shape
    n = b_t.shape[0]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += float(a[i, t]) * float(b_t[j, t])
    return out


def test_matmul_matches_naive_product():
    """Test random shapes up to 16 against an explicit triple loop."""
    rng = np.random.default_rng(7)
    for _ in range(100):
        m, n, k = rng.integers(1, 17, size=3)
        a = as_tensor(rng.standard_normal((m, k)))
        b_t = as_tensor(rng.standard_normal((n, k)))
        np.testing.assert_allclose(
            matmul(a, b_t), _naive_product(a, b_t), rtol=1e-5, atol=1e-5
        )


def test_softmax_rows_is_shift_invariant():
    """Test that adding a constant to every row leaves probabilities unchanged."""
    rng = np.random.default_rng(3)
    scores = as_tensor(rng.standard_normal((6, 9)))
    mask = rng.random((6, 9)) > 0.3
    mask[:, 4] = True
    for shift in (-3.0, 1.5, 4.0):
        np.testing.assert_allclose(
            softmax_rows(scores + np.float32(shift), mask),
            softmax_rows(scores, mask),
            atol=1e-6,
        )


def test_softmax_rows_large_logits_stay_finite():
    """Test that a 1000-unit gap gives exactly one and zero."""
    probs = softmax_rows(as_tensor([[1000, 0]]))
    assert np.all(np.isfinite(probs))
    assert probs.tolist() == [[1.0, 0.0]]


def test_as_tensor_rejects_bad_input():
    """Test zero extents and non-finite values."""
    with pytest.raises(ShapeError):
        as_tensor(np.zeros((0, 3)))
    with pytest.raises(TensorFormatError):
        as_tensor([[1.0, np.nan]])


def test_tensor_file_round_trip(tmp_path):
    """Test that a saved tensor loads back unchanged."""
    t = as_tensor(np.arange(24, dtype=np.float32).reshape(2, 3, 4))
    path = tmp_path / "t.xatn"
    save_tensor(t, path)
    assert np.array_equal(load_tensor(path), t)


def test_tensor_file_header_layout(tmp_path):
    """Test magic, version, dtype code, rank and extents in the header."""
    path = tmp_path / "t.xatn"
    save_tensor(as_tensor(np.ones((2, 3))), path)
    raw = path.read_bytes()
    magic, version, dtype, ndim, reserved = struct.unpack_from("<4sIBBH", raw)
    assert (magic, version, dtype, ndim, reserved) == (MAGIC, 1, 1, 2, 0)
    assert struct.unpack_from("<QQ", raw, 12) == (2, 3)
    assert len(raw) == 12 + 16 + 6 * 4


def test_load_tensor_rejects_corruption(tmp_path):
    """Test bad magic, truncation and non-finite payloads."""
    path = tmp_path / "t.xatn"
    save_tensor(as_tensor(np.ones((2, 2))), path)
    raw = path.read_bytes()

    (tmp_path / "magic.xatn").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(TensorFormatError):
        load_tensor(tmp_path / "magic.xatn")

    (tmp_path / "short.xatn").write_bytes(raw[:-1])
    with pytest.raises(TensorFormatError):
        load_tensor(tmp_path / "short.xatn")

    nan_payload = raw[:-4] + struct.pack("<f", float("nan"))
    (tmp_path / "nan.xatn").write_bytes(nan_payload)
    with pytest.raises(TensorFormatError):
        load_tensor(tmp_path / "nan.xatn")


def test_bool_grid_round_trip_and_dtype_check(tmp_path):
    """Test u8 grids load back and are refused by the float loader."""
    bits = np.array([[True, False], [True, True]])
    path = tmp_path / "m.xatn"
    save_bool_grid(bits, path)
    assert np.array_equal(load_bool_grid(path), bits)
    with pytest.raises(TensorFormatError):
        load_tensor(path)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    """Test that only the target remains after a write."""
    atomic_write_bytes(tmp_path / "out.bin", b"abc")
    assert [p.name for p in tmp_path.iterdir()] == ["out.bin"]
    assert (tmp_path / "out.bin").read_bytes() == b"abc"
