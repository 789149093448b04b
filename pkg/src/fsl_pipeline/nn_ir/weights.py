"""PEFW weight files and seeded weight initialization.

Layout (little-endian)::

    b"PEFW" | u32 version=1 | u32 tensor_count
    per tensor: u16 name_len | name (utf-8) | u8 dtype | u8 ndim | u32 dims[ndim] | payload

dtype 0 is float32, dtype 1 is q8.8 raw int16. Tensors are written in sorted
name order so identical contents give identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Dict, Mapping, Union

import numpy as np

from ..errors import FormatError
from ..numerics.fixed import Q8_8, QTensor
from .graph import Graph, LayerKind

MAGIC = b"PEFW"
VERSION = 1
DTYPE_FLOAT32 = 0
DTYPE_Q8_8 = 1

Tensor = Union[np.ndarray, QTensor]


def write_weights(path: Union[str, Path], tensors: Mapping[str, Tensor]) -> None:
    with open(path, "wb") as f:
        f.write(dumps_weights(tensors))


def dumps_weights(tensors: Mapping[str, Tensor]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        t = tensors[name]
        if isinstance(t, QTensor):
            if t.fmt != Q8_8:
                raise FormatError(f"{name}: only q8.8 tensors can be stored")
            code, payload = DTYPE_Q8_8, t.raw.astype("<i2")
        else:
            code, payload = DTYPE_FLOAT32, np.asarray(t, dtype="<f4")
        encoded = name.encode("utf-8")
        out.append(struct.pack("<H", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<BB", code, payload.ndim))
        out.append(struct.pack(f"<{payload.ndim}I", *payload.shape))
        out.append(np.ascontiguousarray(payload).tobytes())
    return b"".join(out)


def read_weights(path: Union[str, Path]) -> Dict[str, Tensor]:
    with open(path, "rb") as f:
        return loads_weights(f.read())


def loads_weights(data: bytes) -> Dict[str, Tensor]:
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("truncated weight file")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if len(data) < 4 or bytes(take(4)) != MAGIC:
        raise FormatError("bad magic: not a PEFW weight file")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"unsupported PEFW version {version}")
    tensors: Dict[str, Tensor] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(dims, dtype=np.int64))
        if code == DTYPE_FLOAT32:
            tensors[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
        elif code == DTYPE_Q8_8:
            raw = np.frombuffer(take(2 * size), dtype="<i2").reshape(dims).astype(np.int16)
            tensors[name] = QTensor(raw, Q8_8)
        else:
            raise FormatError(f"{name}: unknown dtype code {code}")
    if pos != len(view):
        raise FormatError("trailing bytes after last tensor")
    return tensors


def quantize_weights(tensors: Mapping[str, Tensor]) -> Dict[str, QTensor]:
    return {k: v if isinstance(v, QTensor) else QTensor.from_float(v) for k, v in tensors.items()}


def init_weights(graph: Graph, seed: int = 0, gain: float = 1.0) -> Dict[str, np.ndarray]:
    """He-normal conv weights and mildly perturbed BN statistics, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    w: Dict[str, np.ndarray] = {}
    for n in graph.nodes:
        if n.kind is LayerKind.CONV2D:
            fan_in = n.in_channels * n.kernel ** 2
            shape = (n.out_channels, n.in_channels, n.kernel, n.kernel)
            w[f"{n.id}.weight"] = (rng.standard_normal(shape) * gain * np.sqrt(2.0 / fan_in)).astype(np.float32)
        elif n.kind is LayerKind.BATCHNORM:
            c = graph.shape_of(n.id)[0]
            w[f"{n.id}.gamma"] = rng.uniform(0.5, 1.5, c).astype(np.float32)
            w[f"{n.id}.beta"] = rng.normal(0.0, 0.1, c).astype(np.float32)
            w[f"{n.id}.mean"] = rng.normal(0.0, 0.1, c).astype(np.float32)
            w[f"{n.id}.var"] = rng.uniform(0.5, 1.5, c).astype(np.float32)
    return w
