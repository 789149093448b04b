"""Labeled feature sets and the PEFF feature file.

PEFF layout (little-endian)::

    b"PEFF" | u32 version=1 | u32 feature_dim | u32 class_count
    per class: u32 class_id | u32 vector_count | float32[vector_count * feature_dim]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence, Tuple, Union

import numpy as np

from ..errors import FormatError, ProtocolError

MAGIC = b"PEFF"
VERSION = 1


class SplitTag(str, Enum):
    BASE = "base"
    VALIDATION = "validation"
    NOVEL = "novel"


@dataclass(frozen=True)
class FeatureSet:
    feature_dim: int
    classes: Tuple[Tuple[int, np.ndarray], ...]
    split_tag: SplitTag = SplitTag.NOVEL

    def __post_init__(self):
        classes = tuple((int(cid), np.asarray(v, dtype=np.float32)) for cid, v in self.classes)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "split_tag", SplitTag(self.split_tag))
        if self.feature_dim < 1:
            raise ProtocolError("feature_dim must be positive")
        ids = [cid for cid, _ in classes]
        if len(set(ids)) != len(ids):
            raise ProtocolError("duplicate class ids")
        for cid, vecs in classes:
            if vecs.ndim != 2 or vecs.shape[1] != self.feature_dim:
                raise ProtocolError(f"dimension inconsistency in class {cid}: {vecs.shape}")
            if vecs.shape[0] == 0:
                raise ProtocolError(f"empty class {cid}")

    @classmethod
    def from_mapping(cls, data: Mapping[int, np.ndarray], split_tag=SplitTag.NOVEL) -> "FeatureSet":
        items = sorted(data.items())
        if not items:
            raise ProtocolError("feature set has no classes")
        dim = np.asarray(items[0][1]).shape[-1]
        return cls(dim, tuple(items), split_tag)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def class_ids(self) -> Tuple[int, ...]:
        return tuple(cid for cid, _ in self.classes)

    @property
    def min_population(self) -> int:
        return min(v.shape[0] for _, v in self.classes)


def dumps_features(fs: FeatureSet) -> bytes:
    parts = [MAGIC, struct.pack("<III", VERSION, fs.feature_dim, fs.num_classes)]
    for cid, vecs in fs.classes:
        parts.append(struct.pack("<II", cid, vecs.shape[0]))
        parts.append(np.ascontiguousarray(vecs, dtype="<f4").tobytes())
    return b"".join(parts)


def save_features(path: Union[str, Path], fs: FeatureSet) -> None:
    Path(path).write_bytes(dumps_features(fs))


def loads_features(data: bytes, split_tag=SplitTag.NOVEL) -> FeatureSet:
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError("bad magic: not a PEFF feature file")
    if len(data) < 16:
        raise FormatError("truncated PEFF header")
    version, dim, count = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported PEFF version {version}")
    pos = 16
    classes = []
    for _ in range(count):
        if pos + 8 > len(data):
            raise FormatError("truncated PEFF class header")
        cid, n = struct.unpack_from("<II", data, pos)
        pos += 8
        nbytes = 4 * n * dim
        if pos + nbytes > len(data):
            raise FormatError(f"dimension inconsistency: class {cid} payload shorter than {n} x {dim} floats")
        vecs = np.frombuffer(data, dtype="<f4", count=n * dim, offset=pos).reshape(n, dim)
        classes.append((cid, vecs.astype(np.float32)))
        pos += nbytes
    if pos != len(data):
        raise FormatError("dimension inconsistency: trailing bytes after last class")
    return FeatureSet(dim, tuple(classes), split_tag)


def load_features(path: Union[str, Path], split_tag=SplitTag.NOVEL) -> FeatureSet:
    return loads_features(Path(path).read_bytes(), split_tag)


def synthetic_features(class_means: Sequence[np.ndarray], per_class: int, noise: float,
                       seed: int = 0, class_ids: Sequence[int] = None) -> FeatureSet:
    """Gaussian clusters around ``class_means``; handy for calibration runs."""
    rng = np.random.default_rng(seed)
    means = [np.asarray(m, dtype=np.float64) for m in class_means]
    ids = list(class_ids) if class_ids is not None else list(range(len(means)))
    data = {cid: (m + noise * rng.standard_normal((per_class, m.shape[0]))).astype(np.float32)
            for cid, m in zip(ids, means)}
    return FeatureSet.from_mapping(data)
