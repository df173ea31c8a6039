"""Item catalog, the unified text+SID token numbering, and the SID registry.

Token layout::

    [0, text_token_count)            text tokens
    one block of M*K ids per type    in declaration order
    [SID], [/SID]                    the two ids right after the last block
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .embeddings import ItemTypeSpace, _atomic_write
from .quantizer import SemanticId


@dataclass
class CatalogEntry:
    item_id: str
    item_type: str
    popularity: float = 0.0
    created_at: int = 0
    title: str = ""
    description: str = ""
    sid: SemanticId | None = None


@dataclass(frozen=True)
class TypeBlock:
    item_type: str
    M: int
    K: int
    base_offset: int

    @property
    def size(self) -> int:
        return self.M * self.K

    @property
    def end(self) -> int:
        return self.base_offset + self.size


class Vocabulary:
    """Bijective numbering of text tokens, per-type SID tokens and span delimiters."""

    def __init__(self, text_token_count: int, type_blocks: Sequence[TypeBlock], sid_open: int, sid_close: int):
        if text_token_count < 1:
            raise ValueError("text_token_count must be >= 1")
        self.text_token_count = text_token_count
        self.type_blocks = tuple(type_blocks)
        self.sid_open = sid_open
        self.sid_close = sid_close
        self._by_type = {b.item_type: b for b in self.type_blocks}
        if len(self._by_type) != len(self.type_blocks):
            raise ValueError("item type declared twice")
        spans = sorted([(0, text_token_count, "text")] + [(b.base_offset, b.end, b.item_type) for b in self.type_blocks])
        spans += [(sid_open, sid_open + 1, "[SID]"), (sid_close, sid_close + 1, "[/SID]")]
        spans.sort()
        for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ValueError(f"token ranges overlap: {n0} [{s0},{e0}) and {n1} [{s1},{e1})")
        self.vocab_size = max(e for _, e, _ in spans)

    @classmethod
    def build(cls, spaces: Sequence[ItemTypeSpace | tuple[str, int, int]], text_token_count: int) -> "Vocabulary":
        blocks = []
        offset = text_token_count
        for s in spaces:
            item_type, M, K = (s.item_type, s.M, s.K) if isinstance(s, ItemTypeSpace) else s
            blocks.append(TypeBlock(item_type, M, K, offset))
            offset += M * K
        return cls(text_token_count, blocks, offset, offset + 1)

    @property
    def eos_id(self) -> int:
        # last text token doubles as end-of-text
        return self.text_token_count - 1

    @property
    def item_types(self) -> tuple[str, ...]:
        return tuple(b.item_type for b in self.type_blocks)

    def block(self, item_type: str) -> TypeBlock:
        try:
            return self._by_type[item_type]
        except KeyError:
            raise KeyError(f"unknown item type {item_type!r}") from None

    def is_text(self, token: int) -> bool:
        return 0 <= token < self.text_token_count

    def is_sid(self, token: int) -> bool:
        return any(b.base_offset <= token < b.end for b in self.type_blocks)

    def sid_token_id(self, item_type: str, m: int, c: int) -> int:
        """Token for code ``c`` at 1-based position ``m`` of ``item_type``."""
        b = self.block(item_type)
        if not 1 <= m <= b.M:
            raise ValueError(f"position {m} outside [1, {b.M}] for {item_type!r}")
        if not 0 <= c < b.K:
            raise ValueError(f"code {c} outside [0, {b.K}) for {item_type!r}")
        return b.base_offset + (m - 1) * b.K + c

    def sid_token_info(self, token: int) -> tuple[str, int, int]:
        """Inverse of :meth:`sid_token_id`: ``(item_type, m, c)``."""
        for b in self.type_blocks:
            if b.base_offset <= token < b.end:
                m, c = divmod(token - b.base_offset, b.K)
                return b.item_type, m + 1, c
        raise ValueError(f"token {token} is not a SID token")

    def to_dict(self) -> dict:
        return {
            "text_token_count": self.text_token_count,
            "type_blocks": [[b.item_type, b.M, b.K, b.base_offset] for b in self.type_blocks],
            "sid_open": self.sid_open,
            "sid_close": self.sid_close,
        }

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"Vocabulary(size={self.vocab_size}, text={self.text_token_count}, types={self.item_types})"


def sid_token_id(v: Vocabulary, item_type: str, m: int, c: int) -> int:
    return v.sid_token_id(item_type, m, c)


def vocab_extension_size(spaces: Sequence[ItemTypeSpace | tuple[int, int]]) -> int:
    """Number of tokens added to a text vocabulary: all SID blocks plus two delimiters."""
    if not spaces:
        raise ValueError("need at least one item type")
    total = 0
    for s in spaces:
        M, K = (s.M, s.K) if isinstance(s, ItemTypeSpace) else s
        total += M * K
    return total + 2


# -- registry ------------------------------------------------------------------


@dataclass(frozen=True)
class Bucket:
    canonical: str
    colliders: tuple[str, ...]


@dataclass
class SidRegistry:
    """Per type: SID tuple -> canonical item plus every item sharing the tuple."""

    buckets: dict[str, dict[SemanticId, Bucket]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._item_sid: dict[str, tuple[str, SemanticId]] = {}
        for item_type, table in self.buckets.items():
            for sid, bucket in table.items():
                if bucket.canonical not in bucket.colliders:
                    raise ValueError(f"canonical {bucket.canonical!r} missing from its collider list")
                for item in bucket.colliders:
                    if item in self._item_sid:
                        raise ValueError(f"item {item!r} registered twice")
                    self._item_sid[item] = (item_type, sid)

    def sid_of(self, item_id: str) -> SemanticId:
        return self._item_sid[item_id][1]

    def type_of(self, item_id: str) -> str:
        return self._item_sid[item_id][0]

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._item_sid

    def resolve(self, item_type: str, sid: Sequence[int]) -> str | None:
        bucket = self.buckets.get(item_type, {}).get(tuple(sid))
        return None if bucket is None else bucket.canonical

    def tuples(self, item_type: str) -> list[SemanticId]:
        return sorted(self.buckets.get(item_type, {}))

    @property
    def item_types(self) -> list[str]:
        return sorted(self.buckets)

    @property
    def item_count(self) -> int:
        return len(self._item_sid)

    def canonical_items(self) -> list[str]:
        return sorted(b.canonical for t in self.buckets.values() for b in t.values())


def resolve_collisions(entries: Iterable[CatalogEntry], policy: str = "popularity", seed: int = 0) -> SidRegistry:
    """Group entries by (type, SID) and elect one canonical item per group.

    ``popularity``: most popular wins, ties go to the smallest item_id.
    ``random``: uniform pick from the sorted collider list, seeded.
    """
    groups: dict[str, dict[SemanticId, list[CatalogEntry]]] = {}
    for e in entries:
        if e.sid is None:
            raise ValueError(f"item {e.item_id!r} has no SID")
        groups.setdefault(e.item_type, {}).setdefault(tuple(e.sid), []).append(e)

    rng = random.Random(seed)
    buckets: dict[str, dict[SemanticId, Bucket]] = {}
    for item_type in sorted(groups):
        table = {}
        for sid in sorted(groups[item_type]):
            members = sorted(groups[item_type][sid], key=lambda e: e.item_id)
            if policy == "popularity":
                winner = min(members, key=lambda e: (-e.popularity, e.item_id))
            elif policy == "random":
                winner = members[rng.randrange(len(members))]
            else:
                raise ValueError(f"unknown collision policy {policy!r}")
            table[sid] = Bucket(winner.item_id, tuple(e.item_id for e in members))
        buckets[item_type] = table
    return SidRegistry(buckets)


def permute_sids(registry: SidRegistry, seed: int = 0) -> SidRegistry:
    """Shuffle which tuple each bucket of items holds, within each item type.

    The set of registered tuples and the bucket memberships are unchanged;
    only the tuple -> items assignment moves, destroying any semantic
    neighborhood structure in the codes.
    """
    if registry.item_count == 0:
        raise ValueError("empty registry")
    rng = random.Random(seed)
    out = {}
    for item_type in sorted(registry.buckets):
        table = registry.buckets[item_type]
        sids = sorted(table)
        shuffled = sids[:]
        rng.shuffle(shuffled)
        out[item_type] = {new: table[old] for old, new in zip(sids, shuffled)}
        out[item_type] = dict(sorted(out[item_type].items()))
    return SidRegistry(out)


# -- files ---------------------------------------------------------------------


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(s: str) -> str:
    out = []
    it = iter(s)
    for ch in it:
        if ch == "\\":
            nxt = next(it, "")
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(nxt, "\\" + nxt))
        else:
            out.append(ch)
    return "".join(out)


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_catalog(entries: Iterable[CatalogEntry], path: str | os.PathLike) -> None:
    lines = [
        "\t".join([e.item_id, e.item_type, _fmt_num(e.popularity), str(e.created_at), _escape(e.title), _escape(e.description)])
        for e in entries
    ]
    _atomic_write(Path(path), ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))


def read_catalog(path: str | os.PathLike) -> list[CatalogEntry]:
    entries = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(parts)}")
            item_id, item_type, pop, created, title, desc = parts
            if item_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate item_id {item_id!r}")
            seen.add(item_id)
            try:
                popularity, created_at = float(pop), int(created)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if popularity < 0:
                raise ValueError(f"{path}:{lineno}: negative popularity")
            entries.append(CatalogEntry(item_id, item_type, popularity, created_at, _unescape(title), _unescape(desc)))
    return entries


def write_registry(registry: SidRegistry, path: str | os.PathLike) -> None:
    lines = []
    for item_type in sorted(registry.buckets):
        for sid, b in sorted(registry.buckets[item_type].items()):
            lines.append(f"{item_type}\t{','.join(map(str, sid))}\t{b.canonical}\t{','.join(b.colliders)}")
    _atomic_write(Path(path), ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))


def read_registry(path: str | os.PathLike) -> SidRegistry:
    buckets: dict[str, dict[SemanticId, Bucket]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            item_type, codes, canonical, colliders = parts
            sid = tuple(int(c) for c in codes.split(","))
            buckets.setdefault(item_type, {})[sid] = Bucket(canonical, tuple(colliders.split(",")))
    return SidRegistry(buckets)


def assign_catalog_sids(entries: Sequence[CatalogEntry], sids: Mapping[str, Sequence[int]]) -> list[CatalogEntry]:
    """Copy of ``entries`` with ``sid`` filled from an item_id -> codes mapping."""
    out = []
    for e in entries:
        if e.item_id not in sids:
            raise KeyError(f"no SID assigned for item {e.item_id!r}")
        out.append(CatalogEntry(e.item_id, e.item_type, e.popularity, e.created_at, e.title, e.description, tuple(int(c) for c in sids[e.item_id])))
    return out
