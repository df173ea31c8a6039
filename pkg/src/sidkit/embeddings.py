"""Per-type content embeddings: binary storage, pooling, truncation.

Binary layout (little-endian)::

    b"SIDE" | version u32 | dim u32 | count u64 | count*dim float32

Item ids live in a companion UTF-8 file (``<path>.ids``), one per line,
in row order.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"SIDE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


class EmbeddingFormatError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Dense content vectors for a single item type, one row per item."""

    item_type: str
    item_ids: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[1] == 0:
            raise ValueError(f"expected a (count, dim>0) array, got shape {values.shape}")
        ids = tuple(self.item_ids)
        if len(ids) != values.shape[0]:
            raise ValueError(f"{len(ids)} ids for {values.shape[0]} rows")
        if len(set(ids)) != len(ids):
            raise ValueError("item ids are not unique")
        bad = np.flatnonzero(~np.isfinite(values).all(axis=1))
        if bad.size:
            raise ValueError(f"non-finite value in row {int(bad[0])}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "item_ids", ids)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def count(self) -> int:
        return self.values.shape[0]

    def row(self, item_id: str) -> np.ndarray:
        return self.values[self.item_ids.index(item_id)]


@dataclass(frozen=True)
class ItemTypeSpace:
    """Quantization geometry for one item type: dims and SID shape (M codes of K values)."""

    item_type: str
    source_dim: int
    target_dim: int
    M: int
    K: int

    def __post_init__(self) -> None:
        if not 0 < self.target_dim <= self.source_dim:
            raise ValueError("need 0 < target_dim <= source_dim")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")


def ids_path(path: str | os.PathLike) -> Path:
    return Path(str(path) + ".ids")


def load_embeddings(path: str | os.PathLike, item_type: str) -> EmbeddingMatrix:
    """Read an embedding file and its companion id file."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: malformed header")
    magic, version, dim, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path}: malformed header (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported format version {version}")
    if dim == 0:
        raise EmbeddingFormatError(f"{path}: malformed header (dim=0)")
    payload = len(raw) - _HEADER.size
    expected = count * dim * 4
    if payload < expected:
        raise EmbeddingFormatError(f"{path}: truncated payload ({payload} of {expected} bytes)")
    if payload > expected:
        raise EmbeddingFormatError(f"{path}: {payload - expected} trailing bytes after payload")
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, dim)
    bad = np.flatnonzero(~np.isfinite(values).all(axis=1))
    if bad.size:
        raise EmbeddingFormatError(f"{path}: non-finite value in row {int(bad[0])}")

    id_file = ids_path(path)
    ids = id_file.read_text(encoding="utf-8").splitlines()
    if len(ids) != count:
        raise EmbeddingFormatError(
            f"{id_file}: count mismatch ({len(ids)} ids, header says {count})"
        )
    return EmbeddingMatrix(item_type, tuple(ids), values.astype(np.float32))


def save_embeddings(E: EmbeddingMatrix, path: str | os.PathLike) -> None:
    path = Path(path)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, E.dim, E.count)
    body = E.values.astype("<f4", copy=False).tobytes()
    _atomic_write(path, header + body)
    _atomic_write(ids_path(path), "".join(i + "\n" for i in E.item_ids).encode("utf-8"))


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def mean_pool(rows: Iterable[Sequence[float]]) -> np.ndarray:
    """Elementwise mean of a set of rows, accumulated in float64.

    Used to collapse several content vectors (e.g. all tracks of an artist)
    into one item vector.
    """
    arr = np.asarray(list(rows), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot pool an empty set of rows")
    if arr.ndim != 2:
        raise ValueError("rows must share a single dimension")
    return (arr.sum(axis=0) / arr.shape[0]).astype(np.float32)


def pool_by_key(E: EmbeddingMatrix, groups: dict[str, Sequence[str]], item_type: str) -> EmbeddingMatrix:
    """Mean-pool rows of ``E`` into one row per group key (sorted by key)."""
    index = {item_id: i for i, item_id in enumerate(E.item_ids)}
    keys = sorted(groups)
    pooled = [mean_pool(E.values[[index[m] for m in groups[k]]]) for k in keys]
    return EmbeddingMatrix(item_type, tuple(keys), np.stack(pooled))


def truncate_and_normalize(E: EmbeddingMatrix, target_dim: int) -> EmbeddingMatrix:
    """Keep the leading ``target_dim`` components of each row and rescale to unit L2 norm."""
    if not 0 < target_dim <= E.dim:
        raise ValueError(f"target_dim must be in (0, {E.dim}], got {target_dim}")
    prefix = E.values[:, :target_dim].astype(np.float64)
    norms = np.linalg.norm(prefix, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"item {E.item_ids[int(zero[0])]!r} has an all-zero prefix of length {target_dim}")
    return EmbeddingMatrix(E.item_type, E.item_ids, (prefix / norms[:, None]).astype(np.float32))
