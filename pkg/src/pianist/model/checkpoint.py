"""Checkpoint container.

Layout (all integers little-endian)::

    b"PTCK"              magic
    u8                   format version (1)
    u32                  header length H
    H bytes              UTF-8 JSON: {"config": {...}, "dtype": "<f4"|"<f8",
                                      "tensors": [[name, shape], ...]}
    tensors              raw little-endian data, in header order
"""
from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from .transformer import Model, ModelConfig, parameter_shapes

MAGIC = b"PTCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(model: Model) -> bytes:
    dtype = np.dtype(model.dtype).newbyteorder("<")
    header = {
        "config": dataclasses.asdict(model.config),
        "dtype": dtype.str,
        "tensors": [[name, list(shape)] for name, shape in parameter_shapes(model.config).items()],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    body = b"".join(model.params[name].astype(dtype).tobytes() for name, _ in header["tensors"])
    return MAGIC + struct.pack("<BI", VERSION, len(raw)) + raw + body


def loads(data: bytes) -> Model:
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(data) < 9:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack("<BI", data[4:9])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[9:9 + hlen].decode())
    config = ModelConfig(**header["config"])
    dtype = np.dtype(header["dtype"])
    expected = parameter_shapes(config)
    pos = 9 + hlen
    params = {}
    for name, shape in header["tensors"]:
        if tuple(shape) != expected.get(name):
            raise CheckpointError(f"tensor {name} has shape {shape}, config expects {expected.get(name)}")
        n = int(np.prod(shape)) * dtype.itemsize
        if pos + n > len(data):
            raise CheckpointError(f"tensor {name} truncated")
        params[name] = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)), offset=pos).reshape(shape).astype(dtype.newbyteorder("="))
        pos += n
    if set(params) != set(expected):
        raise CheckpointError("checkpoint tensor list does not match its config")
    return Model(config, params)


def save(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load(path) -> Model:
    with open(path, "rb") as fh:
        return loads(fh.read())
