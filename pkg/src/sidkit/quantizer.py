"""Discrete item codes: residual k-means codebooks and random-hyperplane LSH.

A semantic ID is a plain tuple of ``M`` ints, each in ``[0, K)``. Codes are
0-based throughout.
"""

from __future__ import annotations

import os
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingMatrix, _atomic_write

SemanticId = tuple[int, ...]

CODEBOOK_MAGIC = b"SIDC"
LSH_MAGIC = b"SIDL"
FORMAT_VERSION = 1

_CHUNK = 4096


@dataclass(frozen=True)
class KMeansConfig:
    seed: int = 0
    max_iters: int = 100
    tolerance: float = 1e-4


@dataclass(frozen=True)
class Codebook:
    """``M`` stages of ``K`` centroids; stage ``m`` quantizes the stage ``m-1`` residual."""

    item_type: str
    centroids: np.ndarray = field(repr=False)  # (M, K, dim) float32
    config: KMeansConfig = KMeansConfig()

    def __post_init__(self) -> None:
        c = np.ascontiguousarray(self.centroids, dtype=np.float32)
        if c.ndim != 3:
            raise ValueError(f"centroids must be (M, K, dim), got shape {c.shape}")
        if not np.isfinite(c).all():
            raise ValueError("centroids contain non-finite values")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def M(self) -> int:
        return self.centroids.shape[0]

    @property
    def K(self) -> int:
        return self.centroids.shape[1]

    @property
    def dim(self) -> int:
        return self.centroids.shape[2]


@dataclass(frozen=True)
class LshPlanes:
    item_type: str
    planes: np.ndarray = field(repr=False)  # (bits, dim) float32
    seed: int = 0

    @property
    def bits(self) -> int:
        return self.planes.shape[0]

    @property
    def dim(self) -> int:
        return self.planes.shape[1]


class InsufficientDataError(ValueError):
    pass


# -- k-means -----------------------------------------------------------------


def _nearest(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index and squared distance of the nearest centroid; ties go to the lowest index.

    Distances are exact sums of squared differences (no dot-product expansion)
    so that equidistant centroids compare equal.
    """
    n = points.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    step = max(1, _CHUNK * 64 // max(1, centroids.shape[0]))
    for start in range(0, n, step):
        block = points[start : start + step]
        d2 = ((block[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        lab = d2.argmin(axis=1)
        labels[start : start + step] = lab
        dists[start : start + step] = d2[np.arange(len(block)), lab]
    return labels, dists


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    closest = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a center
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers[i] = points[idx]
        closest = np.minimum(closest, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def lloyd(points: np.ndarray, k: int, config: KMeansConfig, rng: np.random.Generator) -> np.ndarray:
    """Fit ``k`` centroids with k-means++ seeding and Lloyd iterations.

    Stops once the relative inertia improvement drops below ``config.tolerance``
    or after ``config.max_iters`` updates. The returned centroids are always
    the means of their last assignment (or a reseeded point for a cluster that
    went empty), which guarantees the fitted inertia never exceeds the plain
    sum of squares of ``points``.
    """
    points = np.asarray(points, dtype=np.float64)
    centers = kmeans_plusplus(points, k, rng)
    prev = np.inf
    for _ in range(config.max_iters):
        labels, dists = _nearest(points, centers)
        inertia = dists.sum()
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, points)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        taken: set[int] = set()
        for j in np.flatnonzero(~nonempty):
            # reseed to the point worst served by its current centroid
            order = np.argsort(-dists, kind="stable")
            idx = next(int(i) for i in order if int(i) not in taken)
            taken.add(idx)
            centers[j] = points[idx]
            dists[idx] = 0.0
        if prev < np.inf and prev - inertia <= config.tolerance * prev:
            break
        prev = inertia
    return centers


def train_residual_kmeans(
    E: EmbeddingMatrix | np.ndarray,
    M: int,
    K: int,
    config: KMeansConfig = KMeansConfig(),
    item_type: str | None = None,
) -> Codebook:
    """Fit ``M`` codebooks, each on the residuals left by the previous stages."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if K < 1:
        raise ValueError("K must be >= 1")
    if isinstance(E, EmbeddingMatrix):
        item_type = E.item_type if item_type is None else item_type
        X = E.values
    else:
        X = E
    residual = np.asarray(X, dtype=np.float64).copy()
    if residual.shape[0] < K:
        raise InsufficientDataError(f"{residual.shape[0]} points cannot fill K={K} centroids; use a smaller K")
    rng = np.random.default_rng(config.seed)
    stages = []
    for m in range(M):
        distinct = np.unique(residual, axis=0).shape[0]
        if distinct < K:
            raise InsufficientDataError(
                f"stage {m + 1}: only {distinct} distinct residuals for K={K}; use a smaller K"
            )
        centers = lloyd(residual, K, config, rng).astype(np.float32)
        labels, _ = _nearest(residual, centers.astype(np.float64))
        residual -= centers[labels]
        stages.append(centers)
    return Codebook(item_type or "", np.stack(stages), config)


def assign_sids(cb: Codebook, X: np.ndarray) -> np.ndarray:
    """Batch version of :func:`assign_sid`; returns an ``(n, M)`` int array."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != cb.dim:
        raise ValueError(f"dimension mismatch: vector has {X.shape[1]}, codebook has {cb.dim}")
    residual = X.copy()
    codes = np.empty((X.shape[0], cb.M), dtype=np.int64)
    centroids = cb.centroids.astype(np.float64)
    for m in range(cb.M):
        labels, _ = _nearest(residual, centroids[m])
        codes[:, m] = labels
        residual -= centroids[m][labels]
    return codes


def assign_sid(cb: Codebook, x: Sequence[float]) -> SemanticId:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != cb.dim:
        raise ValueError(f"dimension mismatch: vector has {x.shape}, codebook has {cb.dim}")
    return tuple(int(c) for c in assign_sids(cb, x[None, :])[0])


def reconstruct(cb: Codebook, sid: Sequence[int]) -> np.ndarray:
    if len(sid) != cb.M:
        raise ValueError(f"SID has {len(sid)} codes, codebook has M={cb.M}")
    for m, c in enumerate(sid):
        if not 0 <= c < cb.K:
            raise ValueError(f"code {c} at position {m + 1} outside [0, {cb.K})")
    centroids = cb.centroids.astype(np.float64)
    return sum(centroids[m, c] for m, c in enumerate(sid))


def stage_residual_norms(cb: Codebook, X: np.ndarray) -> np.ndarray:
    """Mean squared residual norm before stage 1 and after each stage (length ``M+1``)."""
    residual = np.asarray(X, dtype=np.float64).copy()
    out = [float((residual**2).sum(axis=1).mean())]
    centroids = cb.centroids.astype(np.float64)
    for m in range(cb.M):
        labels, _ = _nearest(residual, centroids[m])
        residual -= centroids[m][labels]
        out.append(float((residual**2).sum(axis=1).mean()))
    return np.array(out)


# -- LSH -----------------------------------------------------------------------


def train_lsh(dim: int, bits: int, seed: int = 0, item_type: str = "") -> LshPlanes:
    """Draw ``bits`` random hyperplanes with i.i.d. standard normal entries."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if bits < 1:
        raise ValueError("bits must be >= 1")
    planes = np.random.default_rng(seed).standard_normal((bits, dim)).astype(np.float32)
    return LshPlanes(item_type, planes, seed)


def _bits_per_code(K: int) -> int:
    b = K.bit_length() - 1
    if K < 2 or (1 << b) != K:
        raise ValueError(f"K={K} is not a power of two")
    return b


def lsh_bits(planes: LshPlanes, X: np.ndarray) -> np.ndarray:
    # sgn(0) counts as positive
    return (np.atleast_2d(np.asarray(X, dtype=np.float64)) @ planes.planes.T.astype(np.float64) >= 0).astype(np.int64)


def assign_lsh_sids(planes: LshPlanes, X: np.ndarray, M: int, K: int) -> np.ndarray:
    b = _bits_per_code(K)
    if planes.bits != M * b:
        raise ValueError(f"{planes.bits} planes, need M*log2(K) = {M * b}")
    bits = lsh_bits(planes, X).reshape(-1, M, b)
    weights = 1 << np.arange(b - 1, -1, -1)  # big-endian inside each group
    return (bits * weights).sum(axis=2)


def assign_lsh_sid(planes: LshPlanes, x: Sequence[float], M: int, K: int) -> SemanticId:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != planes.dim:
        raise ValueError(f"dimension mismatch: vector has {x.shape}, planes have {planes.dim}")
    return tuple(int(c) for c in assign_lsh_sids(planes, x[None, :], M, K)[0])


# -- diagnostics ---------------------------------------------------------------


def collision_rate(sids: Sequence[Sequence[int]]) -> float:
    """Fraction of items whose tuple is shared with at least one other item."""
    if len(sids) == 0:
        raise ValueError("empty SID list")
    counts = Counter(tuple(s) for s in sids)
    return sum(c for c in counts.values() if c >= 2) / len(sids)


def prefix_coherence(E: EmbeddingMatrix | np.ndarray, sids: Sequence[Sequence[int]], prefix_len: int) -> float:
    """Mean (over groups) of the average pairwise cosine inside each prefix group.

    Groups with a single member are skipped; groups are not weighted by size.
    """
    X = E.values if isinstance(E, EmbeddingMatrix) else np.asarray(E)
    X = np.asarray(X, dtype=np.float64)
    if len(sids) != X.shape[0]:
        raise ValueError("one SID per embedding row required")
    M = len(sids[0]) if len(sids) else 0
    if not 1 <= prefix_len <= M:
        raise ValueError(f"prefix_len must be in [1, {M}]")
    U = X / np.linalg.norm(X, axis=1, keepdims=True)
    groups: dict[tuple, list[int]] = defaultdict(list)
    for i, s in enumerate(sids):
        groups[tuple(s[:prefix_len])].append(i)
    means = []
    for members in groups.values():
        n = len(members)
        if n < 2:
            continue
        V = U[members]
        total = V.sum(axis=0)
        pair_sum = (total @ total - (V * V).sum()) / 2
        means.append(pair_sum / (n * (n - 1) / 2))
    if not means:
        raise ValueError("no shared prefixes")
    return float(np.mean(means))


@dataclass
class SweepRow:
    M: int
    K: int
    collision_rate: float
    prefix_coherence: list[float | None]


def sweep_configs(
    E: EmbeddingMatrix, candidates: Sequence[tuple[int, int]], config: KMeansConfig = KMeansConfig()
) -> list[SweepRow]:
    """Train one codebook per ``(M, K)`` candidate and tabulate code-quality diagnostics."""
    rows = []
    for M, K in candidates:
        cb = train_residual_kmeans(E, M, K, config)
        sids = [tuple(r) for r in assign_sids(cb, E.values)]
        coherence: list[float | None] = []
        for p in range(1, M + 1):
            try:
                coherence.append(prefix_coherence(E, sids, p))
            except ValueError:
                coherence.append(None)
        rows.append(SweepRow(M, K, collision_rate(sids), coherence))
    return rows


def format_sweep(rows: Sequence[SweepRow]) -> str:
    lines = ["M\tK\tcollision_rate\tprefix_coherence"]
    for r in rows:
        coh = ",".join("nan" if c is None else f"{c:.4f}" for c in r.prefix_coherence)
        lines.append(f"{r.M}\t{r.K}\t{r.collision_rate:.4f}\t{coh}")
    return "\n".join(lines) + "\n"


# -- persistence ---------------------------------------------------------------


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def save_codebook(cb: Codebook, path: str | os.PathLike) -> None:
    head = (
        CODEBOOK_MAGIC
        + struct.pack("<I", FORMAT_VERSION)
        + _pack_str(cb.item_type)
        + struct.pack("<IIIQ", cb.M, cb.K, cb.dim, cb.config.seed)
    )
    _atomic_write(Path(path), head + cb.centroids.astype("<f4").tobytes())


def _read_header(raw: bytes, magic: bytes, path) -> tuple[str, int]:
    if raw[:4] != magic:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    (n,) = struct.unpack_from("<I", raw, 8)
    item_type = raw[12 : 12 + n].decode("utf-8")
    return item_type, 12 + n


def load_codebook(path: str | os.PathLike) -> Codebook:
    raw = Path(path).read_bytes()
    item_type, off = _read_header(raw, CODEBOOK_MAGIC, path)
    M, K, dim, seed = struct.unpack_from("<IIIQ", raw, off)
    off += 20
    if len(raw) - off != M * K * dim * 4:
        raise ValueError(f"{path}: truncated payload")
    c = np.frombuffer(raw, dtype="<f4", offset=off).reshape(M, K, dim)
    return Codebook(item_type, c.astype(np.float32), KMeansConfig(seed=seed))


def save_lsh(planes: LshPlanes, path: str | os.PathLike) -> None:
    head = (
        LSH_MAGIC
        + struct.pack("<I", FORMAT_VERSION)
        + _pack_str(planes.item_type)
        + struct.pack("<IIQ", planes.bits, planes.dim, planes.seed)
    )
    _atomic_write(Path(path), head + planes.planes.astype("<f4").tobytes())


def load_lsh(path: str | os.PathLike) -> LshPlanes:
    raw = Path(path).read_bytes()
    item_type, off = _read_header(raw, LSH_MAGIC, path)
    bits, dim, seed = struct.unpack_from("<IIQ", raw, off)
    off += 16
    if len(raw) - off != bits * dim * 4:
        raise ValueError(f"{path}: truncated payload")
    p = np.frombuffer(raw, dtype="<f4", offset=off).reshape(bits, dim)
    return LshPlanes(item_type, p.astype(np.float32), seed)
