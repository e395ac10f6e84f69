"""Versioned single-file checkpoints for trained parameters.

Layout: magic ``AOSCKPT1``, little-endian u32 header length, a UTF-8 JSON
header, then one matrix blob per tensor in the fixed tensor-name order.
Tensors with more than two axes are flattened to (prod(leading), last);
true shapes live in the header.  Bodies are float32, so writing is lossy
against the float64 training state but deterministic: the same seed always
produces a byte-identical file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import matrixio
from .model import ModelConfig, ModelParams

MAGIC = b"AOSCKPT1"
FORMAT_VERSION = 1
_LEN = struct.Struct("<I")


class CheckpointError(ValueError):
    """File is not a readable checkpoint."""


@dataclass
class Checkpoint:
    params: ModelParams
    config: ModelConfig
    header: dict


def _as_2d(tensor: np.ndarray) -> np.ndarray:
    if tensor.ndim == 1:
        return tensor.reshape(1, -1)
    if tensor.ndim == 2:
        return tensor
    return tensor.reshape(-1, tensor.shape[-1])


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    config: ModelConfig,
    seed: int | None = None,
    epoch: int | None = None,
    dev_metrics: dict | None = None,
    optimizer: dict | None = None,
    extra: dict | None = None,
) -> None:
    tensors = params.tensors()
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(config),
        "seed": seed,
        "epoch": epoch,
        "dev_metrics": dev_metrics,
        "optimizer": optimizer
        or {"name": "adam", "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "batch_loss": "sum"},
        "tensors": [
            {"name": name, "shape": list(tensor.shape)} for name, tensor in tensors.items()
        ],
    }
    if extra:
        header["extra"] = extra
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(header_bytes)))
        fh.write(header_bytes)
        for tensor in tensors.values():
            fh.write(matrixio.pack_matrix(_as_2d(tensor)))


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    offset = len(MAGIC)
    (header_len,) = _LEN.unpack_from(data, offset)
    offset += _LEN.size
    header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    offset += header_len
    config = ModelConfig(**header["config"])
    loaded: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        matrix, offset = matrixio.unpack_matrix(data, offset)
        loaded[entry["name"]] = matrix.astype(np.float64).reshape(entry["shape"])
    missing = set(ModelParams.TENSOR_NAMES) - set(loaded)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return Checkpoint(params=ModelParams(**loaded), config=config, header=header)
