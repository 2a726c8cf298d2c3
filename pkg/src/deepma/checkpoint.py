"""Binary checkpoint format for :class:`~deepma.model.DmaNet`.

Layout (little endian)::

    b"DMAN" | u32 version | u32 n_edps
    ArchConfig: u32 height, width, in_channels, n_blocks, channels[n_blocks],
                strides[n_blocks], afb_reduction, kernel_size | f64 power
    u32 tensor count, then per tensor:
        u16 name length | utf-8 name | u8 rank | u32 dims[rank] | f32 values (row-major)
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .autodiff import parameter
from .model import ArchConfig, DmaNet, EdpModel

__all__ = ["MAGIC", "VERSION", "CheckpointFormatError", "save_checkpoint", "load_checkpoint", "dumps", "loads"]

MAGIC = b"DMAN"
VERSION = 1


class CheckpointFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


def dumps(net: DmaNet) -> bytes:
    a = net.arch
    buf = io.BytesIO()
    buf.write(MAGIC)
    u32 = [VERSION, net.n_edps, a.height, a.width, a.in_channels, len(a.channels), *a.channels, *a.strides]
    u32 += [a.afb_reduction, a.kernel_size]
    buf.write(struct.pack(f"<{len(u32)}I", *u32))
    buf.write(struct.pack("<d", a.power))
    named = net.named_parameters()
    buf.write(struct.pack("<I", len(named)))
    for name, t in named:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", t.data.ndim))
        buf.write(struct.pack(f"<{t.data.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"truncated checkpoint while reading {what}", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(data: bytes) -> DmaNet:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointFormatError("bad magic, not a DMAN checkpoint", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version} (expected {VERSION})", 4)
    n_edps, h, w, cin, nb = r.unpack("<5I", "architecture")
    channels = r.unpack(f"<{nb}I", "channels")
    strides = r.unpack(f"<{nb}I", "strides")
    afb_reduction, kernel_size = r.unpack("<2I", "architecture")
    (power,) = r.unpack("<d", "power")
    arch = ArchConfig(h, w, cin, channels, strides, afb_reduction, kernel_size, n_edps, power)
    (count,) = r.unpack("<I", "tensor count")
    params: list[dict] = [{} for _ in range(n_edps)]
    for _ in range(count):
        start = r.pos
        (ln,) = r.unpack("<H", "name length")
        name = r.take(ln, "tensor name").decode("utf-8")
        (rank,) = r.unpack("<B", "rank")
        dims = r.unpack(f"<{rank}I", "dims")
        n = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(r.take(4 * n, f"values of {name}"), dtype="<f4").reshape(dims)
        edp, _, local = name.partition(".")
        if not edp.startswith("edp") or not edp[3:].isdigit() or int(edp[3:]) >= n_edps:
            raise CheckpointFormatError(f"tensor name {name!r} does not belong to an EDP", start)
        params[int(edp[3:])][local] = parameter(values.astype(np.float32))
    if r.pos != len(data):
        raise CheckpointFormatError("trailing bytes after last tensor", r.pos)
    net = DmaNet(arch, [EdpModel(i, arch, p) for i, p in enumerate(params)])
    reference = DmaNet.init(arch, 0)
    for got, ref in zip(net.edps, reference.edps):
        if list(got.params) != list(ref.params) or any(got.params[k].shape != ref.params[k].shape for k in ref.params):
            raise CheckpointFormatError("tensor set does not match the architecture", r.pos)
    return net


def save_checkpoint(net: DmaNet, path) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(dumps(net))
    os.replace(tmp, path)


def load_checkpoint(path) -> DmaNet:
    with open(path, "rb") as f:
        return loads(f.read())
