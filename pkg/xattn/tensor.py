"""Dense tensor primitives and the XATN file format.

A Tensor is a C-ordered ``float32`` numpy array with one to three positive
extents and finite values. Every other module builds on the helpers here.
"""

import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import numpy.typing as npt

from xattn.errors import EmptyDistributionError, ShapeError, TensorFormatError

logger = logging.getLogger("xattn.tensor")

Tensor = npt.NDArray[np.float32]
BoolGrid = npt.NDArray[np.bool_]

MAGIC = b"XATN"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 1
DTYPE_U8 = 2
MAX_NDIM = 3

_HEADER = struct.Struct("<4sIBBH")
_EXTENT = struct.Struct("<Q")


def as_tensor(data: npt.ArrayLike) -> Tensor:
    """Convert array-like data into a validated float32 Tensor.

    Raises:
        ShapeError: If an extent is zero or the rank is outside 1-3.
        TensorFormatError: If any value is NaN or infinite.
    """
    arr = np.ascontiguousarray(data, dtype=np.float32)
    _check_dims(arr.shape)
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError("Tensor holds non-finite values")
    return arr


def _check_dims(dims: tuple[int, ...]) -> None:
    if not 1 <= len(dims) <= MAX_NDIM:
        raise ShapeError(f"Tensor rank must be 1-{MAX_NDIM}, got {len(dims)}")
    if any(d <= 0 for d in dims):
        raise ShapeError(f"Tensor extents must be positive, got {dims}")


def matmul(a: Tensor, b_transposed: Tensor) -> Tensor:
    """Return ``a @ b_transposed.T`` for ``a`` of m×k and ``b_transposed`` of n×k.

    The product is taken in float32 by BLAS, whose reduction order depends
    on its blocking and thread count. Results repeat bit for bit only while
    shapes and the BLAS thread count stay fixed; ``bench`` pins the latter
    with threadpoolctl.

    Raises:
        ShapeError: If either operand is not 2-D or the inner extents differ.
    """
    if a.ndim != 2 or b_transposed.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-D operands, got {a.shape} and {b_transposed.shape}"
        )
    if a.shape[1] != b_transposed.shape[1]:
        raise ShapeError(
            f"Inner extents differ: {a.shape} vs {b_transposed.shape} (transposed)"
        )
    return np.matmul(
        a.astype(np.float32, copy=False), b_transposed.astype(np.float32, copy=False).T
    )


def softmax_rows(scores: Tensor, mask: BoolGrid | None = None) -> Tensor:
    """Row-wise softmax with optional boolean mask (True = permitted).

    Masked entries are excluded from the row max and the normalizer and come
    out exactly zero.

    Raises:
        ShapeError: If the mask shape differs from the scores.
        EmptyDistributionError: If a row has no permitted entry.
    """
    scores = np.asarray(scores, dtype=np.float32)
    if scores.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D tensor, got {scores.shape}")

    if mask is None:
        row_max = scores.max(axis=1, keepdims=True)
        weights = np.exp(scores - row_max)
    else:
        if mask.shape != scores.shape:
            raise ShapeError(f"Mask shape {mask.shape} != scores shape {scores.shape}")
        permitted = mask.any(axis=1)
        if not permitted.all():
            empty = int(np.flatnonzero(~permitted)[0])
            raise EmptyDistributionError(f"Row {empty} has no permitted entry")
        masked = np.where(mask, scores, np.float32(-np.inf))
        row_max = masked.max(axis=1, keepdims=True)
        weights = np.where(mask, np.exp(masked - row_max), np.float32(0.0))

    return (weights / weights.sum(axis=1, keepdims=True)).astype(np.float32)


def save_tensor(t: Tensor, path: str | Path) -> None:
    """Write a float32 tensor in the XATN format."""
    arr = as_tensor(t)
    _write(path, DTYPE_FLOAT32, arr.shape, arr.astype("<f4").tobytes(order="C"))
    logger.debug(f"Saved tensor {arr.shape} to {path}")


def load_tensor(path: str | Path) -> Tensor:
    """Read a float32 tensor written by :func:`save_tensor`.

    Raises:
        TensorFormatError: On bad magic, version, dtype, truncation or
            non-finite payload.
    """
    dtype, dims, payload = _read(path)
    if dtype != DTYPE_FLOAT32:
        raise TensorFormatError(f"{path}: expected float32 dtype code, got {dtype}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError(f"{path}: payload holds non-finite values")
    return arr


def save_bool_grid(bits: BoolGrid, path: str | Path) -> None:
    """Write a boolean grid with dtype code 2 (one byte per cell)."""
    arr = np.ascontiguousarray(bits, dtype=bool)
    _check_dims(arr.shape)
    _write(path, DTYPE_U8, arr.shape, arr.astype(np.uint8).tobytes(order="C"))


def load_bool_grid(path: str | Path) -> BoolGrid:
    """Read a boolean grid written by :func:`save_bool_grid`."""
    dtype, dims, payload = _read(path)
    if dtype != DTYPE_U8:
        raise TensorFormatError(f"{path}: expected u8 dtype code, got {dtype}")
    cells = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    if np.any(cells > 1):
        raise TensorFormatError(f"{path}: mask cells must be 0 or 1")
    return cells.astype(bool)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write bytes to a sibling temp file, then rename it over ``path``."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, target)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def _write(path: str | Path, dtype: int, dims: tuple[int, ...], payload: bytes) -> None:
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, dtype, len(dims), 0)
    extents = b"".join(_EXTENT.pack(d) for d in dims)
    atomic_write_bytes(path, header + extents + payload)


def _read(path: str | Path) -> tuple[int, tuple[int, ...], bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TensorFormatError(f"{path}: truncated header")

    magic, version, dtype, ndim, reserved = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if dtype not in (DTYPE_FLOAT32, DTYPE_U8):
        raise TensorFormatError(f"{path}: unknown dtype code {dtype}")
    if not 1 <= ndim <= MAX_NDIM:
        raise TensorFormatError(f"{path}: ndim must be 1-{MAX_NDIM}, got {ndim}")
    if reserved != 0:
        raise TensorFormatError(f"{path}: reserved field must be zero")

    offset = _HEADER.size
    if len(raw) < offset + ndim * _EXTENT.size:
        raise TensorFormatError(f"{path}: truncated extents")
    dims = tuple(
        _EXTENT.unpack_from(raw, offset + i * _EXTENT.size)[0] for i in range(ndim)
    )
    if any(d == 0 for d in dims):
        raise TensorFormatError(f"{path}: zero-length extent in {dims}")
    offset += ndim * _EXTENT.size

    item_size = 4 if dtype == DTYPE_FLOAT32 else 1
    expected = int(np.prod(dims)) * item_size
    payload = raw[offset:]
    if len(payload) != expected:
        raise TensorFormatError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    return dtype, dims, payload
