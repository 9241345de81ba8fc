"""Portable ``.popt`` checkpoints.

Layout, all integers little-endian u32 and all reals little-endian f64::

    b"POPT" | version=1 | tensor count
    per tensor: name length | UTF-8 name | ndim | dims[ndim] | data
    order: parameters, then "<name>.m" and "<name>.v" per parameter, then "step"
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .training import ParamStore

MAGIC = b"POPT"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def _tensors(store: ParamStore):
    for name, value in store.params.items():
        yield name, value
    for name in store.params:
        yield name + ".m", store.m[name]
        yield name + ".v", store.v[name]
    yield "step", np.array(float(store.step))


def encode(store: ParamStore) -> bytes:
    items = list(_tensors(store))
    out = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, value in items:
        raw = name.encode("utf-8")
        value = np.asarray(value, dtype="<f8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        out.append(value.tobytes(order="C"))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError("truncated checkpoint")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode(data: bytes) -> ParamStore:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError("bad magic, not a .popt checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    count = r.u32()
    tensors = {}
    order = []
    for _ in range(count):
        try:
            name = r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError("tensor name is not UTF-8") from exc
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        tensors[name] = arr
        order.append(name)
    if r.pos != len(data):
        raise CheckpointFormatError("trailing bytes after last tensor")
    if "step" not in tensors:
        raise CheckpointFormatError("missing step counter")

    store = ParamStore()
    for name in order:
        if name == "step" or name.endswith((".m", ".v")):
            continue
        store.params[name] = tensors[name]
        try:
            store.m[name] = tensors[name + ".m"]
            store.v[name] = tensors[name + ".v"]
        except KeyError as exc:
            raise CheckpointFormatError(f"missing moment buffer for {name!r}") from exc
    store.step = int(tensors["step"])
    return store


def save_checkpoint(store: ParamStore, path) -> None:
    data = encode(store)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path) -> ParamStore:
    with open(path, "rb") as fh:
        return decode(fh.read())
