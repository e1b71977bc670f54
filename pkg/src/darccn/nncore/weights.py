"""Binary weights file.

Layout, all integers little-endian u32::

    b"DRCN" | version | n_config | n_config x (name, n_values, values...)
            | n_tensors | n_tensors x (name, rank, dims..., float32 payload)

Names are a u32 byte length followed by UTF-8 bytes. The config block holds
the integer counts of the model configuration so a file can be checked against
(or used to rebuild) the network it belongs to.
"""
from __future__ import annotations

import os
import struct
import tempfile
from collections import OrderedDict
from typing import BinaryIO

import numpy as np

from ..errors import WeightsFormatError

MAGIC = b"DRCN"
VERSION = 1


def _write_name(f: BinaryIO, name: str) -> None:
    raw = name.encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise WeightsFormatError("truncated weights file")
    return buf


def _read_u32(f: BinaryIO) -> int:
    return struct.unpack("<I", _read_exact(f, 4))[0]


def _read_name(f: BinaryIO) -> str:
    return _read_exact(f, _read_u32(f)).decode("utf-8")


def save_weights(path, tensors: dict[str, np.ndarray], config: dict[str, list[int]] | None = None) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    config = config or {}
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-weights-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", VERSION, len(config)))
            for key, values in config.items():
                _write_name(f, key)
                f.write(struct.pack("<I", len(values)))
                f.write(struct.pack(f"<{len(values)}I", *values))
            f.write(struct.pack("<I", len(tensors)))
            for name, arr in tensors.items():
                arr = np.asarray(arr)
                _write_name(f, name)
                f.write(struct.pack("<I", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_weights(path) -> tuple[OrderedDict[str, np.ndarray], dict[str, list[int]]]:
    try:
        f = open(path, "rb")
    except OSError as e:
        raise WeightsFormatError(f"cannot open weights file {path}: {e}") from e
    with f:
        if _read_exact(f, 4) != MAGIC:
            raise WeightsFormatError(f"{path}: not a DRCN weights file")
        version = _read_u32(f)
        if version != VERSION:
            raise WeightsFormatError(f"{path}: unsupported format version {version}")
        config: dict[str, list[int]] = {}
        for _ in range(_read_u32(f)):
            key = _read_name(f)
            n = _read_u32(f)
            config[key] = list(struct.unpack(f"<{n}I", _read_exact(f, 4 * n)))
        tensors: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(_read_u32(f)):
            name = _read_name(f)
            rank = _read_u32(f)
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").reshape(dims)
            tensors[name] = data.astype(np.float32)
        if f.read(1):
            raise WeightsFormatError(f"{path}: trailing bytes after last tensor")
    return tensors, config
