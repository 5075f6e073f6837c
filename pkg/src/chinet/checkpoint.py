"""Binary model container and its JSON twin.

Layout (all integers little-endian)::

    b"CHIN"  u32 version  u32 depth
    u32 n_dims   u32 dims[n_dims]        # d_in+1, h_1 .. h_{L+1}, n_classes
    u32 n_tensors
    per tensor:  u16 name_len  name(utf-8)  u8 flags  u8 ndim  u32 shape[ndim]
                 f64 payload (row-major)

Flag bit 0 marks a dense core that is exactly symmetric in its two input legs;
its payload then holds only the upper triangle of every slice (row-major order of
``numpy.triu_indices``), while the shape header keeps the full ``(out, h, h)``.
Tensors named ``spectrum{i}`` carry the kept Gram eigenvalues of bond ``i``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ChiNet, DenseCore, FactoredCore
from .odt import DiagonalisedNet

MAGIC = b"CHIN"
VERSION = 1
FLAG_SYMMETRIC = 1


def _tensors(model) -> tuple[ChiNet, list]:
    net = model.net if isinstance(model, DiagonalisedNet) else model
    out = [("embedding", 0, net.embedding)]
    for i, core in enumerate(net.cores, start=1):
        if isinstance(core, FactoredCore):
            out += [(f"core{i}.A", 0, core.A), (f"core{i}.B", 0, core.B)]
        else:
            out.append((f"core{i}.f", FLAG_SYMMETRIC if core.symmetric else 0, core.f))
    out.append(("unembedding", 0, net.unembedding))
    if isinstance(model, DiagonalisedNet):
        out += [(f"spectrum{i}", 0, np.asarray(lam)) for i, lam in enumerate(model.eigenvalues, start=1)]
    return net, out


def encode(model) -> bytes:
    net, tensors = _tensors(model)
    dims = [net.embedding.shape[1]] + net.bond_dims + [net.n_classes]
    parts = [MAGIC, struct.pack("<III", VERSION, net.depth, len(dims)),
             struct.pack(f"<{len(dims)}I", *dims), struct.pack("<I", len(tensors))]
    for name, flags, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", flags, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        if flags & FLAG_SYMMETRIC:
            rows, cols = np.triu_indices(arr.shape[1])
            arr = np.ascontiguousarray(arr[:, rows, cols], dtype="<f8")
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes, where):
        self.raw, self.pos, self.where = raw, 0, where

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.where}: truncated at byte {self.pos}")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(raw: bytes, where="<bytes>"):
    """Inverse of :func:`encode`; returns a ChiNet or, with spectra present, a DiagonalisedNet."""
    r = _Reader(raw, where)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{where}: bad magic, not a chi-net checkpoint")
    version, depth, n_dims = r.unpack("<III")
    if version != VERSION:
        raise CheckpointError(f"{where}: unsupported format version {version} (expected {VERSION})")
    dims = list(r.unpack(f"<{n_dims}I"))
    if n_dims != depth + 3:
        raise CheckpointError(f"{where}: dimension table of length {n_dims} for depth {depth}")
    (n_tensors,) = r.unpack("<I")
    tensors, flags = {}, {}
    for _ in range(n_tensors):
        (n,) = r.unpack("<H")
        name = r.take(n).decode()
        flag, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}I")
        if flag & FLAG_SYMMETRIC:
            if ndim != 3 or shape[1] != shape[2]:
                raise CheckpointError(f"{where}: symmetric tensor {name} has shape {shape}")
            rows, cols = np.triu_indices(shape[1])
            packed = np.frombuffer(r.take(8 * shape[0] * len(rows)), dtype="<f8").reshape(shape[0], -1)
            arr = np.zeros(shape)
            arr[:, rows, cols] = packed
            arr[:, cols, rows] = packed
        else:
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        tensors[name] = arr
        flags[name] = flag
    if r.pos != len(raw):
        raise CheckpointError(f"{where}: {len(raw) - r.pos} trailing bytes")
    try:
        cores = []
        for i in range(1, depth + 1):
            if f"core{i}.f" in tensors:
                cores.append(DenseCore(tensors[f"core{i}.f"], bool(flags[f"core{i}.f"] & FLAG_SYMMETRIC)))
            else:
                cores.append(FactoredCore(tensors[f"core{i}.A"], tensors[f"core{i}.B"]))
        net = ChiNet(tensors["embedding"], cores, tensors["unembedding"])
    except KeyError as exc:
        raise CheckpointError(f"{where}: missing tensor {exc.args[0]}") from None
    if [net.embedding.shape[1]] + net.bond_dims + [net.n_classes] != dims:
        raise CheckpointError(f"{where}: dimension table {dims} disagrees with tensors")
    spectra = [tensors[f"spectrum{i}"] for i in range(1, depth + 2) if f"spectrum{i}" in tensors]
    if spectra:
        return DiagonalisedNet(net, tuple(spectra))
    return net


def manifest(model) -> dict:
    net, tensors = _tensors(model)
    return {
        "format": "CHIN",
        "version": VERSION,
        "depth": net.depth,
        "dims": [net.embedding.shape[1]] + net.bond_dims + [net.n_classes],
        "tensors": [{"name": n, "shape": list(np.shape(a)), "symmetric": bool(f & FLAG_SYMMETRIC)}
                    for n, f, a in tensors],
    }


def save(model, path) -> Path:
    """Write ``path`` and its JSON twin ``path.json``."""
    path = Path(path)
    path.write_bytes(encode(model))
    twin = path.with_name(path.name + ".json")
    twin.write_text(json.dumps(manifest(model), indent=2) + "\n")
    return path


def load(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    return decode(path.read_bytes(), path)


def load_net(path) -> ChiNet:
    model = load(path)
    return model.net if isinstance(model, DiagonalisedNet) else model
