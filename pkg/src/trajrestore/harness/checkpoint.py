"""Binary checkpoints.

Layout (all integers little-endian)::

    b"VBCK"  u32 version
    u32 len + UTF-8 JSON header {"model": {...}, "meta": {...}}
    u32 tensor count, then per tensor:
        u16 name len + name, u8 dtype code (b"f" float32 | b"d" float64),
        u8 ndim, u32 dims..., raw little-endian values
    u8 has_optimizer; if 1: u64 step_count, then first and second moments
        for every tensor in the same order and dtype
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..model import ModelConfig, param_shapes
from ..numerics import OptimizerState, Tensor

MAGIC = b"VBCK"
VERSION = 1
_DTYPES = {b"f": np.dtype("<f4"), b"d": np.dtype("<f8")}
_CODES = {np.dtype("float32"): b"f", np.dtype("float64"): b"d"}
_OPT_FIELDS = ("base_lr", "weight_decay", "epsilon", "warmup_steps", "max_grad_norm", "beta1", "beta2")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict
    model_config: ModelConfig
    meta: dict = field(default_factory=dict)
    optimizer: OptimizerState | None = None


def _write_array(fh, arr, dtype):
    fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def write_checkpoint(params, model_config, path, meta=None, optimizer=None):
    head = {"model": model_config.to_dict(), "meta": meta or {}}
    if optimizer is not None:
        head["optimizer"] = {k: getattr(optimizer, k) for k in _OPT_FIELDS}
    header = json.dumps(head, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(params)))
    for name, t in params.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)) + raw + code + struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        _write_array(buf, arr, _DTYPES[code])
    if optimizer is None:
        buf.write(b"\x00")
    else:
        buf.write(b"\x01" + struct.pack("<Q", optimizer.step_count))
        for moments in (optimizer.m, optimizer.v):
            for name, t in params.items():
                _write_array(buf, moments[name], _DTYPES[_CODES[t.data.dtype]])
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"truncated payload while reading {what}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    r = _Reader(raw)
    if raw[:4] != MAGIC:
        raise CheckpointError("bad magic")
    r.take(4, "magic")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = r.unpack("<I", "header length")
    header = json.loads(r.take(hlen, "header").decode())
    config = ModelConfig(**header["model"])
    expected = param_shapes(config)
    (count,) = r.unpack("<I", "tensor count")
    params = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "tensor name")
        name = r.take(nlen, "tensor name").decode()
        code = r.take(1, f"dtype of {name}")
        if code not in _DTYPES:
            raise CheckpointError(f"unknown dtype code {code!r} for {name}")
        (ndim,) = r.unpack("<B", f"rank of {name}")
        shape = r.unpack(f"<{ndim}I", f"shape of {name}")
        dt = _DTYPES[code]
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(n * dt.itemsize, f"tensor {name}"), dtype=dt).reshape(shape)
        if name not in expected or tuple(expected[name]) != tuple(shape):
            raise CheckpointError(f"shape mismatch for {name}: {shape} vs config {expected.get(name)}")
        params[name] = Tensor(arr.astype(dt.newbyteorder("="), copy=True), requires_grad=True)
    if set(params) != set(expected):
        raise CheckpointError(f"parameter set does not match config: missing {sorted(set(expected) - set(params))}")
    optimizer = None
    (has_opt,) = r.unpack("<B", "optimizer flag")
    if has_opt:
        (step,) = r.unpack("<Q", "optimizer step")
        moments = []
        for label in ("m", "v"):
            d = {}
            for name, t in params.items():
                dt = t.data.dtype.newbyteorder("<")
                d[name] = np.frombuffer(r.take(t.size * dt.itemsize, f"optimizer {label} of {name}"), dtype=dt).reshape(t.shape).astype(t.data.dtype)
            moments.append(d)
        optimizer = OptimizerState(**header.get("optimizer", {}), step_count=int(step), m=moments[0], v=moments[1])
    return Checkpoint(params, config, header.get("meta", {}), optimizer)
