"""End-to-end wiring: config, codebooks -> registry -> scorer -> constrained next-item eval."""

from __future__ import annotations

import json
import logging
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import CatalogEntry, SidRegistry, Vocabulary, assign_catalog_sids, permute_sids, resolve_collisions
from .datagen import EvalPair, Interaction, group_by_user, temporal_split
from .decoder import DEFAULT_BEAM_WIDTH, build_tries, constrained_beam_search
from .embeddings import EmbeddingMatrix, ItemTypeSpace, truncate_and_normalize
from .eval import EvalRecord, hit_rate_at_k, ndcg_at_k
from .quantizer import (
    Codebook,
    KMeansConfig,
    LshPlanes,
    assign_lsh_sids,
    assign_sids,
    train_lsh,
    train_residual_kmeans,
)
from .scorer import TrigramTable, train_trigram
from .sequence import ItemRef, MixedSequence, encode

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
BYTE_TEXT_TOKENS = 257


@dataclass
class TypeConfig:
    item_type: str
    embeddings: str
    M: int = 2
    K: int = 64
    target_dim: int = 32
    quantizer: str = "rkmeans"  # or "lsh"
    seed: int = 0
    candidates: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class DecodingConfig:
    beam_width: int = DEFAULT_BEAM_WIDTH
    temperature: float = 0.6
    top_k: int = 20
    top_p: float = 0.95


@dataclass
class PipelineConfig:
    types: list[TypeConfig]
    catalog: str = "catalog.tsv"
    logs: str = "logs.tsv"
    work_dir: str = "work"
    text_token_count: int = BYTE_TEXT_TOKENS
    collision_policy: str = "popularity"
    collision_seed: int = 0
    decoding: DecodingConfig = field(default_factory=DecodingConfig)
    trigram_alpha: float = 0.01
    version: int = CONFIG_VERSION

    def __post_init__(self) -> None:
        names = [t.item_type for t in self.types]
        dupes = sorted(n for n, c in Counter(names).items() if c > 1)
        if dupes:
            raise ValueError(f"item type declared more than once: {', '.join(dupes)}")
        if not names:
            raise ValueError("config declares no item types")

    def type(self, item_type: str) -> TypeConfig:
        for t in self.types:
            if t.item_type == item_type:
                return t
        raise KeyError(f"item type {item_type!r} not in config")

    def spaces(self) -> list[ItemTypeSpace]:
        return [ItemTypeSpace(t.item_type, t.target_dim, t.target_dim, t.M, t.K) for t in self.types]

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.build([(t.item_type, t.M, t.K) for t in self.types], self.text_token_count)

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "PipelineConfig":
        data = dict(data)
        version = data.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {version}")
        base = base or Path(".")

        def resolve(p: str) -> str:
            return str(p if os.path.isabs(p) else base / p)

        types = []
        for t in data.pop("types"):
            t = dict(t)
            t["embeddings"] = resolve(t["embeddings"])
            t["candidates"] = [tuple(c) for c in t.get("candidates", [])]
            types.append(TypeConfig(**t))
        decoding = DecodingConfig(**data.pop("decoding", {}))
        for key in ("catalog", "logs", "work_dir"):
            if key in data:
                data[key] = resolve(data[key])
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(types=types, decoding=decoding, **data)

    def to_dict(self) -> dict:
        d = asdict(self)
        for t in d["types"]:
            t["candidates"] = [list(c) for c in t["candidates"]]
        return d


def load_config(path: str | os.PathLike) -> PipelineConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        return PipelineConfig.from_dict(json.load(f), path.parent)


def prepare(E: EmbeddingMatrix, tc: TypeConfig) -> EmbeddingMatrix:
    return truncate_and_normalize(E, tc.target_dim)


def fit_quantizer(E: EmbeddingMatrix, tc: TypeConfig) -> Codebook | LshPlanes:
    """Train the configured quantizer on an already truncated matrix."""
    if tc.quantizer == "rkmeans":
        return train_residual_kmeans(E, tc.M, tc.K, KMeansConfig(seed=tc.seed))
    if tc.quantizer == "lsh":
        bits = tc.M * (tc.K.bit_length() - 1)
        return train_lsh(E.dim, bits, tc.seed, E.item_type)
    raise ValueError(f"unknown quantizer {tc.quantizer!r}")


def quantize(q: Codebook | LshPlanes, E: EmbeddingMatrix, tc: TypeConfig) -> dict[str, tuple[int, ...]]:
    codes = assign_sids(q, E.values) if isinstance(q, Codebook) else assign_lsh_sids(q, E.values, tc.M, tc.K)
    return {item: tuple(int(c) for c in row) for item, row in zip(E.item_ids, codes)}


def build_registry(
    catalog: Sequence[CatalogEntry],
    sids: dict[str, tuple[int, ...]],
    policy: str = "popularity",
    seed: int = 0,
    permute_seed: int | None = None,
) -> SidRegistry:
    entries = assign_catalog_sids([e for e in catalog if e.item_id in sids], sids)
    missing = len(catalog) - len(entries)
    if missing:
        log.warning("%d catalog items have no embedding and were left out of the registry", missing)
    registry = resolve_collisions(entries, policy, seed)
    return registry if permute_seed is None else permute_sids(registry, permute_seed)


# -- next-item evaluation --------------------------------------------------------


def history_sequence(events: Sequence[Interaction], registry: SidRegistry, limit: int | None = 50) -> MixedSequence:
    recent = list(events) if limit is None else list(events)[-limit:] if limit else []
    return MixedSequence([ItemRef(registry.type_of(e.item_id), registry.sid_of(e.item_id)) for e in recent])


def train_history_scorer(
    train_logs: Sequence[Interaction], registry: SidRegistry, v: Vocabulary, alpha: float = 0.01
) -> TrigramTable:
    """Trigram over encoded user histories; span delimiters are skipped as context."""
    corpus = [
        encode(history_sequence(evs, registry, limit=None), v)
        for evs in group_by_user(e for e in train_logs if e.item_id in registry).values()
    ]
    return train_trigram(corpus, alpha, v.vocab_size, ignore=(v.sid_open, v.sid_close))


@dataclass
class NextItemResult:
    hr: dict[int, float]
    ndcg: dict[int, float]
    popularity_hr: dict[int, float]
    random_hr: dict[int, float]
    n_users: int
    records: list[EvalRecord] = field(repr=False, default_factory=list)


def evaluate_next_item(
    pairs: Sequence[EvalPair],
    train_logs: Sequence[Interaction],
    registry: SidRegistry,
    v: Vocabulary,
    scorer,
    catalog_sizes: dict[str, int],
    ks: Sequence[int] = (10, 30),
    beam_width: int = DEFAULT_BEAM_WIDTH,
    history_limit: int = 50,
) -> NextItemResult:
    """Constrained beam search steered to the label's item type, against a popularity ranking."""
    tries = build_tries(registry, v)
    counts = Counter(e.item_id for e in train_logs)
    by_type: dict[str, list[str]] = {}
    for item_type in registry.item_types:
        items = [i for t in registry.buckets[item_type].values() for i in t.colliders]
        by_type[item_type] = sorted(items, key=lambda i: (-counts[i], i))

    records, pop_records = [], []
    kmax = max(ks)
    for pair in pairs:
        if pair.label.item_id not in registry:
            continue
        item_type = registry.type_of(pair.label.item_id)
        context = [e for e in pair.context if e.item_id in registry]
        prompt = encode(history_sequence(context, registry, history_limit), v)
        result = constrained_beam_search(scorer, prompt, tries, v, beam_width, target_type=item_type)
        records.append(EvalRecord(pair.user_id, result.item_ids, pair.label.item_id))
        pop_records.append(EvalRecord(pair.user_id, by_type[item_type][:kmax], pair.label.item_id))
    if not records:
        raise ValueError("no evaluable users")
    random_hr = {
        K: float(np.mean([min(1.0, K / catalog_sizes[registry.type_of(r.label)]) for r in records])) for K in ks
    }
    return NextItemResult(
        hr={K: hit_rate_at_k(records, K) for K in ks},
        ndcg={K: ndcg_at_k(records, K) for K in ks},
        popularity_hr={K: hit_rate_at_k(pop_records, K) for K in ks},
        random_hr=random_hr,
        n_users=len(records),
        records=records,
    )


@dataclass(frozen=True)
class DeskRunConfig:
    M: int = 2
    K: int = 64
    target_dim: int = 32
    seed: int = 0
    split_day: int = 89
    gap: int = 1
    alpha: float = 0.01
    beam_width: int = DEFAULT_BEAM_WIDTH
    max_users: int | None = None


def desk_run(
    embeddings: dict[str, EmbeddingMatrix],
    catalog: Sequence[CatalogEntry],
    logs: Sequence[Interaction],
    cfg: DeskRunConfig = DeskRunConfig(),
    permute_seed: int | None = None,
    quantizer: str = "rkmeans",
) -> NextItemResult:
    """Quantize every type, build the registry, train the trigram and run the next-item eval."""
    sids: dict[str, tuple[int, ...]] = {}
    types = list(embeddings)
    for item_type in types:
        tc = TypeConfig(item_type, "", cfg.M, cfg.K, cfg.target_dim, quantizer, cfg.seed)
        E = prepare(embeddings[item_type], tc)
        sids.update(quantize(fit_quantizer(E, tc), E, tc))
    registry = build_registry(catalog, sids, permute_seed=permute_seed)
    v = Vocabulary.build([(t, cfg.M, cfg.K) for t in types], BYTE_TEXT_TOKENS)
    train, pairs = temporal_split(logs, cfg.split_day, cfg.gap)
    if cfg.max_users is not None:
        pairs = pairs[: cfg.max_users]
    scorer = train_history_scorer(train, registry, v, cfg.alpha)
    sizes = {t: embeddings[t].count for t in types}
    return evaluate_next_item(pairs, train, registry, v, scorer, sizes, beam_width=cfg.beam_width)
