"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian)::

    b"TTLM"
    version
    config_len, config_json (UTF-8, sorted keys)
    n_tensors
    repeated n_tensors times:
        name_len, name (UTF-8)
        ndim, dim_0 .. dim_{ndim-1}
        float32 data, row-major little-endian

Tensors appear in ``named_parameters()`` order of :class:`ToyTransformer`.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from polyglot_probe.errors import InputError
from polyglot_probe.model.config import ModelConfig
from polyglot_probe.model.transformer import ToyTransformer

MAGIC = b"TTLM"
VERSION = 1


class CheckpointError(InputError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def checkpoint_bytes(model: ToyTransformer) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = model.config.to_json().encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg]
    params = list(model.named_parameters())
    parts.append(struct.pack("<I", len(params)))
    for name, p in params:
        raw = name.encode("utf-8")
        arr = p.detach().cpu().to(torch.float32).numpy()
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim)]
        parts += [struct.pack(f"<{arr.ndim}I", *arr.shape)]
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: ToyTransformer, path: str | os.PathLike) -> None:
    from polyglot_probe.io import atomic_write_bytes

    atomic_write_bytes(Path(path), checkpoint_bytes(model))


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint_bytes(data: bytes) -> ToyTransformer:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}; expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}; expected {VERSION}")
    cfg_raw = r.take(r.u32("config length"), "config")
    try:
        config = ModelConfig.from_dict(json.loads(cfg_raw.decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable embedded config: {exc}") from exc
    model = ToyTransformer(config)
    expected = list(model.named_parameters())
    n_tensors = r.u32("tensor count")
    with torch.no_grad():
        for i, (name, param) in enumerate(expected):
            if i >= n_tensors:
                raise ShapeMismatchError(f"missing tensor {name}: checkpoint holds {n_tensors} tensors")
            got = r.take(r.u32(f"name length of {name}"), f"name of {name}").decode("utf-8")
            if got != name:
                raise ShapeMismatchError(f"expected tensor {name}, found {got}")
            ndim = r.u32(f"ndim of {name}")
            shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"shape of {name}"))
            if tuple(shape) != tuple(param.shape):
                raise ShapeMismatchError(
                    f"tensor {name} has shape {tuple(shape)}, expected {tuple(param.shape)}"
                )
            count = int(np.prod(shape)) if ndim else 1
            buf = r.take(4 * count, f"data of {name}")
            arr = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)
            param.copy_(torch.from_numpy(arr))
    if n_tensors > len(expected):
        raise ShapeMismatchError(
            f"checkpoint holds {n_tensors} tensors, config requires {len(expected)}"
        )
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")
    model.eval()
    return model


def load_checkpoint(path: str | os.PathLike) -> ToyTransformer:
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {p}")
    return load_checkpoint_bytes(p.read_bytes())
