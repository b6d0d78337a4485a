"""File formats: the binary tensor container, key=value text, and CSV rows.

Tensor container layout, all little-endian:
magic "DPPM" | version u32 | rank u32 | one u32 per dim | float32 payload,
row-major. Values are widened to float64 on load.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"DPPM"
_TENSOR_VERSION = 1


def save_tensor(path, array) -> Path:
    path = Path(path)
    arr = np.asarray(array, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _TENSOR_VERSION))
        fh.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            fh.write(struct.pack("<I", d))
        fh.write(arr.astype("<f4").tobytes(order="C"))
    return path


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a tensor file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _TENSOR_VERSION:
            raise ValueError(f"{path}: unsupported tensor version {version}")
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        payload = fh.read(4 * count)
        if len(payload) != 4 * count or fh.read(1):
            raise ValueError(f"{path}: payload size does not match header")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)


def write_kv(path, mapping) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for key, value in mapping.items():
            fh.write(f"{key} = {value}\n")
    return path


def read_kv(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def append_csv_row(path, header, row) -> Path:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(header)
        writer.writerow(row)
    return path
