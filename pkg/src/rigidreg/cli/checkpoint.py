"""Binary checkpoint files.

Layout (little-endian): magic ``3DRN``, u32 version, u32 length + UTF-8 JSON
holding the network configs, u32 tensor count, then per tensor: u16 name
length, name, u8 ndim, ndim x u32 dims, float32 row-major data.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from ..regnet import Network, RegNetConfig, param_shapes

MAGIC = b"3DRN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, net: Network, meta: dict | None = None) -> None:
    header = json.dumps({"networks": [c.to_dict() for c in net.configs], "meta": meta or {}},
                        sort_keys=True).encode()
    flat = net.flat()
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<II", VERSION, len(header)) + header)
        f.write(struct.pack("<I", len(flat)))
        for name, arr in flat.items():
            raw = name.encode()
            f.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read(f: BinaryIO, size: int, what: str) -> bytes:
    buf = f.read(size)
    if len(buf) != size:
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path) -> tuple[Network, dict]:
    """Returns the network (float32 parameters) and the stored metadata."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, not a checkpoint file")
        version, hlen = struct.unpack("<II", _read(f, 8, "header"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
        header = json.loads(_read(f, hlen, "config block"))
        configs = [RegNetConfig.from_dict(d) for d in header["networks"]]
        (count,) = struct.unpack("<I", _read(f, 4, "tensor count"))
        expected = {f"s{i}.{k}": s for i, c in enumerate(configs) for k, s in param_shapes(c).items()}
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read(f, 2, "tensor name"))
            name = _read(f, nlen, "tensor name").decode()
            (ndim,) = struct.unpack("<B", _read(f, 1, f"tensor {name}"))
            shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim, f"tensor {name}"))
            if name not in expected:
                raise CheckpointError(f"unexpected tensor {name}")
            if tuple(shape) != expected[name]:
                raise CheckpointError(f"tensor {name} has shape {tuple(shape)}, config expects {expected[name]}")
            size = int(np.prod(shape)) * 4
            buf = f.read(size)
            if len(buf) != size:
                raise CheckpointError(f"tensor {name} truncated: {len(buf)} of {size} bytes, "
                                      f"shape mismatch with {expected[name]}")
            tensors[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)
        if f.read(1):
            raise CheckpointError("trailing bytes after last tensor")
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise CheckpointError(f"missing tensors: {missing}")
    params = []
    for i, c in enumerate(configs):
        pre = f"s{i}."
        params.append({k[len(pre):]: v for k, v in tensors.items() if k.startswith(pre)})
    return Network(configs, params), header.get("meta", {})
