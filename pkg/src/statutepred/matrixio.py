"""Binary matrix files for embedding and parameter tensors.

Layout: 7-byte magic ``AOSEMB1``, little-endian u32 row count, u32 column
count, then rows*cols float32 values row-major.  A matrix written for
embedded text gets a sidecar ``<path>.json`` holding ``{"hashes": [...]}``,
the SHA-256 hex of each row's source text (list position = row index).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"AOSEMB1"
_HEADER = struct.Struct("<7sII")


class MatrixFormatError(ValueError):
    """File does not follow the matrix layout."""


def text_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def pack_matrix(matrix: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(matrix, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    rows, cols = arr.shape
    if rows >= 2**32 or cols >= 2**32:
        raise ValueError(f"matrix too large for the format: {arr.shape}")
    return _HEADER.pack(MAGIC, rows, cols) + arr.tobytes()


def unpack_matrix(buf: bytes | memoryview, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one matrix starting at ``offset``; returns (matrix, next offset)."""
    view = memoryview(buf)
    if len(view) - offset < _HEADER.size:
        raise MatrixFormatError("truncated matrix header")
    magic, rows, cols = _HEADER.unpack_from(view, offset)
    if magic != MAGIC:
        raise MatrixFormatError(f"bad magic {magic!r}")
    body_start = offset + _HEADER.size
    body_len = rows * cols * 4
    if len(view) - body_start < body_len:
        raise MatrixFormatError(
            f"matrix body truncated: need {body_len} bytes, have {len(view) - body_start}"
        )
    flat = np.frombuffer(view, dtype="<f4", count=rows * cols, offset=body_start)
    return flat.reshape(rows, cols).copy(), body_start + body_len


def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".json")


def write_matrix(
    path: str | Path, matrix: np.ndarray, row_hashes: Sequence[str] | None = None
) -> None:
    blob = pack_matrix(matrix)
    Path(path).write_bytes(blob)
    if row_hashes is not None:
        if len(row_hashes) != matrix.shape[0]:
            raise ValueError(
                f"{len(row_hashes)} row hashes for a {matrix.shape[0]}-row matrix"
            )
        sidecar_path(path).write_text(
            json.dumps({"hashes": list(row_hashes)}), encoding="utf-8"
        )


def read_matrix(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    matrix, end = unpack_matrix(data)
    if end != len(data):
        raise MatrixFormatError(f"{path}: {len(data) - end} trailing bytes")
    return matrix


def read_row_hashes(path: str | Path) -> list[str]:
    sidecar = sidecar_path(path)
    index = json.loads(sidecar.read_text(encoding="utf-8"))
    return list(index["hashes"])
