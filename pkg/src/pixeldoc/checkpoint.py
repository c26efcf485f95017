"""Versioned binary checkpoint format.

Layout (all integers little-endian)::

    b"PDFG" | u32 version | u32 header_len | header JSON (utf-8)
    u32 n_tensors
    per tensor: u32 name_len | name (utf-8) | u32 ndim | u64 dim * ndim | f64 values (C order)
"""

from __future__ import annotations

import io
import json
import struct
from collections import OrderedDict

import numpy as np
import torch

from .errors import PixelDocError
from .model import DTYPE, ModelConfig

MAGIC = b"PDFG"
VERSION = 1


class CheckpointError(PixelDocError, ValueError):
    pass


def dumps(params, cfg: ModelConfig, extra: dict | None = None) -> bytes:
    buf = io.BytesIO()
    header = json.dumps({"config": cfg.to_dict(), **(extra or {})}, sort_keys=True).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(params)))
    for name, tensor in params.items():
        arr = tensor.detach().cpu().numpy().astype("<f8", copy=False)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def loads(data: bytes) -> tuple[OrderedDict, ModelConfig, dict]:
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        out = view[pos : pos + n]
        pos += n
        return out

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("not a PDFG checkpoint")
    version, header_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(bytes(take(header_len)).decode("utf-8"))
    cfg = ModelConfig.from_dict(header.pop("config"))
    (n,) = struct.unpack("<I", take(4))
    params: OrderedDict = OrderedDict()
    for _ in range(n):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).copy()
        params[name] = torch.from_numpy(arr).to(DTYPE)
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint tensors")
    return params, cfg, header


def save_checkpoint(path, params, cfg: ModelConfig, extra: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(params, cfg, extra))


def load_checkpoint(path) -> tuple[OrderedDict, ModelConfig, dict]:
    with open(path, "rb") as fh:
        return loads(fh.read())
