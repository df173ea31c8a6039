"""Desk-scale synthetic corpus: clustered embeddings, a catalog and interaction logs.

Each item type gets ``clusters`` Gaussian topics. A user history is a walk:
with probability ``affinity`` the next item is a popularity-weighted pick
among the current item's nearest neighbors (same type), otherwise a
popularity-weighted pick from the whole catalog. Next items are therefore
predictable from the previous item's neighborhood, which is what semantic
IDs should expose.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import CatalogEntry, write_catalog
from .datagen import Interaction, write_logs
from .embeddings import EmbeddingMatrix, save_embeddings

_WORDS = (
    "history science comedy crime politics sport music health business tech "
    "culture travel food family faith nature finance fiction poetry drama "
    "space ocean war art film games math language law medicine design"
).split()


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_items: int = 10_000
    item_types: tuple[str, ...] = ("episode", "audiobook")
    n_interactions: int = 100_000
    n_users: int = 2_000
    clusters: int = 16
    dim: int = 64
    spread: float = 0.35
    affinity: float = 0.8
    neighbors: int = 20
    n_days: int = 100
    popularity_sigma: float = 0.5


@dataclass
class SynthCorpus:
    embeddings: dict[str, EmbeddingMatrix]
    catalog: list[CatalogEntry]
    logs: list[Interaction]
    topics: dict[str, int]  # item_id -> generating cluster


def _neighbor_table(X: np.ndarray, n: int) -> np.ndarray:
    U = X / np.linalg.norm(X, axis=1, keepdims=True)
    out = np.empty((X.shape[0], n), dtype=np.int64)
    for start in range(0, X.shape[0], 1024):
        sims = U[start : start + 1024] @ U.T
        for r in range(sims.shape[0]):
            sims[r, start + r] = -np.inf
        part = np.argpartition(-sims, n, axis=1)[:, :n]
        order = np.take_along_axis(sims, part, axis=1).argsort(axis=1)[:, ::-1]
        out[start : start + sims.shape[0]] = np.take_along_axis(part, order, axis=1)
    return out


def generate_corpus(cfg: SynthConfig = SynthConfig()) -> SynthCorpus:
    rng = np.random.default_rng(cfg.seed)
    n_types = len(cfg.item_types)
    sizes = [cfg.n_items // n_types + (1 if i < cfg.n_items % n_types else 0) for i in range(n_types)]

    embeddings: dict[str, EmbeddingMatrix] = {}
    catalog: list[CatalogEntry] = []
    topics: dict[str, int] = {}
    weights, neighbors, global_ids = [], [], []
    offset = 0
    for item_type, size in zip(cfg.item_types, sizes):
        centers = rng.standard_normal((cfg.clusters, cfg.dim))
        labels = rng.integers(cfg.clusters, size=size)
        X = centers[labels] + cfg.spread * rng.standard_normal((size, cfg.dim))
        ids = [f"{item_type[:2]}{i:05d}" for i in range(size)]
        embeddings[item_type] = EmbeddingMatrix(item_type, tuple(ids), X.astype(np.float32))
        w = rng.lognormal(0.0, cfg.popularity_sigma, size)
        weights.append(w)
        neighbors.append(_neighbor_table(X, cfg.neighbors) + offset)
        global_ids.extend(ids)
        for i, item_id in enumerate(ids):
            g = int(labels[i])
            topics[item_id] = g
            a, b = _WORDS[g % len(_WORDS)], _WORDS[(3 * g + 7) % len(_WORDS)]
            catalog.append(
                CatalogEntry(
                    item_id,
                    item_type,
                    popularity=round(float(w[i]) * 1000),
                    created_at=int(rng.integers(0, cfg.n_days)),
                    title=f"{a.title()} {item_type} {i}",
                    description=f"A {item_type} about {a} and {b}. Part of topic {g}.",
                )
            )
        offset += size

    w_all = np.concatenate(weights)
    p_all = w_all / w_all.sum()
    nbr = np.concatenate(neighbors)

    per_user = [cfg.n_interactions // cfg.n_users + (1 if u < cfg.n_interactions % cfg.n_users else 0) for u in range(cfg.n_users)]
    logs: list[Interaction] = []
    for u, count in enumerate(per_user):
        if count == 0:
            continue
        user = f"u{u:05d}"
        days = np.sort(rng.integers(0, cfg.n_days, size=count))
        cur = int(rng.choice(len(p_all), p=p_all))
        for j in range(count):
            if j:
                if rng.random() < cfg.affinity:
                    cand = nbr[cur]
                    pw = w_all[cand] / w_all[cand].sum()
                    cur = int(cand[rng.choice(len(cand), p=pw)])
                else:
                    cur = int(rng.choice(len(p_all), p=p_all))
            logs.append(Interaction(user, int(days[j]), global_ids[cur]))
    return SynthCorpus(embeddings, catalog, logs, topics)


def write_corpus(corpus: SynthCorpus, out_dir: str | os.PathLike) -> dict[str, str]:
    """Write embeddings, catalog and logs; returns the paths by role."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for item_type, E in corpus.embeddings.items():
        p = out / f"{item_type}.emb"
        save_embeddings(E, p)
        paths[f"embeddings:{item_type}"] = str(p)
    write_catalog(corpus.catalog, out / "catalog.tsv")
    write_logs(corpus.logs, out / "logs.tsv")
    paths["catalog"] = str(out / "catalog.tsv")
    paths["logs"] = str(out / "logs.tsv")
    return paths


def gaussian_fixture(seed: int, G: int = 16, d: int = 32, n: int = 5000, spread: float = 0.3) -> tuple[np.ndarray, np.ndarray]:
    """``n`` points from ``G`` separated Gaussians; returns (points, generating cluster)."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((G, d))
    labels = rng.integers(G, size=n)
    return centers[labels] + spread * rng.standard_normal((n, d)), labels


def stage1_purity(first_codes: Sequence[int], labels: Sequence[int]) -> float:
    """Fraction of items whose first code equals the majority first code of their cluster."""
    first_codes, labels = np.asarray(first_codes), np.asarray(labels)
    agree = 0
    for g in np.unique(labels):
        codes = first_codes[labels == g]
        agree += np.bincount(codes).max()
    return agree / len(labels)
