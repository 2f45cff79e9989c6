"""Binary checkpoint format.

Layout (all integers little-endian ``u32``)::

    b"CLFP" | version | config_len | config (UTF-8 ``key=value`` lines)
    | tensor_count | { name_len | name | rank | extents... | float32 LE payload }*

Parameters are stored as float32; float64 models are narrowed on save.
"""
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, build_model

MAGIC = b"CLFP"
VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


def _u32(v):
    return _U32.pack(v)


def config_text(config):
    return "".join(f"{k}={v}\n" for k, v in config.to_items())


def encode_checkpoint(model):
    cfg = config_text(model.config).encode("utf-8")
    params = model.parameters()
    parts = [MAGIC, _u32(VERSION), _u32(len(cfg)), cfg, _u32(len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        parts += [_u32(len(raw)), raw, _u32(arr.ndim)]
        parts += [_u32(d) for d in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return _U32.unpack(self.take(4))[0]


def decode_checkpoint(data):
    """Rebuild a float32 :class:`Model` from checkpoint bytes."""
    r = _Reader(bytes(data))
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        text = r.take(r.u32()).decode("utf-8")
        items = [line.split("=", 1) for line in text.splitlines() if line]
        config = ModelConfig.from_items(items)
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"invalid config block: {exc}") from exc
    model = build_model(config, dtype=np.float32)
    expected = model.parameters()
    values = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        payload = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        if name not in expected or expected[name].shape != shape:
            raise CheckpointError(f"unexpected tensor {name!r} with shape {shape}")
        values[name] = payload
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after last tensor")
    if set(values) != set(expected):
        raise CheckpointError(f"missing tensors: {sorted(set(expected) - set(values))}")
    for name, arr in expected.items():
        arr[...] = values[name]
    return model


def save_checkpoint(model, path):
    Path(path).write_bytes(encode_checkpoint(model))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())

