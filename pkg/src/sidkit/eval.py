"""Ranking metrics, neighborhood stability and SID validity."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .catalog import SidRegistry, Vocabulary
from .decoder import spans_resolve
from .embeddings import EmbeddingMatrix, _atomic_write


@dataclass(frozen=True)
class EvalRecord:
    user_id: str
    ranked: tuple[str, ...]
    label: str

    def __init__(self, user_id: str, ranked: Sequence[str], label: str):
        ranked = tuple(ranked)
        if len(set(ranked)) != len(ranked):
            raise ValueError(f"ranked list for {user_id!r} has duplicates")
        object.__setattr__(self, "user_id", user_id)
        object.__setattr__(self, "ranked", ranked)
        object.__setattr__(self, "label", label)

    @property
    def rank(self) -> int | None:
        """1-based rank of the label, or None if absent."""
        try:
            return self.ranked.index(self.label) + 1
        except ValueError:
            return None


def _check(records: Sequence[EvalRecord], K: int) -> None:
    if not records:
        raise ValueError("empty record set")
    if isinstance(K, float) or K < 1:
        raise ValueError(f"K must be a positive integer, got {K!r}")


def hit_rate_at_k(records: Sequence[EvalRecord], K: int) -> float:
    _check(records, K)
    hits = sum(1 for r in records if r.rank is not None and r.rank <= K)
    return hits / len(records)


def ndcg_at_k(records: Sequence[EvalRecord], K: int) -> float:
    """Mean of log(2)/log(rank+1) over users; 0 when the label is outside the top K."""
    _check(records, K)
    total = 0.0
    for r in records:
        if r.rank is not None and r.rank <= K:
            total += math.log(2) / math.log(r.rank + 1)
    return total / len(records)


def write_metrics_report(rows: Iterable[tuple[str, int, float, int]], path: str | os.PathLike) -> str:
    text = "".join(f"{metric}\t{K}\t{value:.10f}\t{n}\n" for metric, K, value, n in rows)
    _atomic_write(Path(path), text.encode("utf-8"))
    return text


def metrics_rows(records: Sequence[EvalRecord], ks: Sequence[int]) -> list[tuple[str, int, float, int]]:
    rows = []
    for K in ks:
        rows.append(("HR", K, hit_rate_at_k(records, K), len(records)))
        rows.append(("NDCG", K, ndcg_at_k(records, K), len(records)))
    return rows


# -- neighborhoods ---------------------------------------------------------------


@dataclass(frozen=True)
class NeighborhoodSnapshot:
    epoch: str
    n: int
    neighbors: dict[str, frozenset[str]]


def knn_topn(E: EmbeddingMatrix, n: int, epoch: str = "", chunk: int = 1024) -> NeighborhoodSnapshot:
    """Exact cosine top-``n`` per item, self excluded, ties by item_id."""
    if n < 1 or n >= E.count:
        raise ValueError(f"need 1 <= n < {E.count}, got {n}")
    X = E.values.astype(np.float64)
    U = X / np.linalg.norm(X, axis=1, keepdims=True)
    ids = np.array(E.item_ids)
    id_rank = np.argsort(np.argsort(ids, kind="stable"), kind="stable")  # position in sorted-id order
    out: dict[str, frozenset[str]] = {}
    for start in range(0, E.count, chunk):
        sims = U[start : start + chunk] @ U.T
        for row, i in enumerate(range(start, min(start + chunk, E.count))):
            s = sims[row].copy()
            s[i] = -np.inf
            order = np.lexsort((id_rank, -s))[:n]
            out[E.item_ids[i]] = frozenset(ids[order].tolist())
    return NeighborhoodSnapshot(epoch, n, out)


@dataclass(frozen=True)
class StabilitySummary:
    per_item: dict[str, float]
    median: float
    p10: float
    count: int


def jaccard_stability(s0: NeighborhoodSnapshot, s1: NeighborhoodSnapshot) -> StabilitySummary:
    """Per-item Jaccard overlap of two neighbor sets, with the median and 10th percentile."""
    if s0.n != s1.n or set(s0.neighbors) != set(s1.neighbors):
        raise ValueError("snapshots cover different item universes or n")
    per = {}
    for item in sorted(s0.neighbors):
        a, b = s0.neighbors[item], s1.neighbors[item]
        union = len(a | b)
        per[item] = len(a & b) / union if union else 1.0
    vals = np.array(list(per.values()))
    return StabilitySummary(per, float(np.median(vals)), float(np.percentile(vals, 10)), len(vals))


# -- validity --------------------------------------------------------------------


def valid_sid_rate(outputs: Sequence[tuple[Sequence[int], SidRegistry]], v: Vocabulary) -> float:
    """Fraction of outputs whose every span parses and resolves in its registry."""
    if not outputs:
        raise ValueError("no outputs")
    return sum(1 for ids, reg in outputs if spans_resolve(ids, v, reg)) / len(outputs)
