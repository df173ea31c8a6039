"""Alignment and instruction-tuning records, interaction logs and the temporal split."""

from __future__ import annotations

import json
import logging
import os
import random
import re
import string
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .catalog import CatalogEntry, SidRegistry, Vocabulary
from .embeddings import _atomic_write
from .sequence import ByteCodec, ItemRef, MixedSequence, encode, render
from .templates import choose_template

log = logging.getLogger(__name__)

MAX_HISTORY = 50


# -- prompts -------------------------------------------------------------------


def render_prompt(task: str, template_seed: int, fields: Mapping[str, object], v: Vocabulary) -> MixedSequence:
    """Fill a task template; item-valued fields become SID spans.

    Field values may be strings (or anything ``str()``-able), a single
    :class:`ItemRef`, or a list of them. An empty list renders as ``(none)``.
    """
    template = choose_template(task, template_seed)
    codec = ByteCodec(v)
    segments: list = []
    for literal, name, spec, conv in string.Formatter().parse(template):
        if literal:
            segments.append(codec.text(literal))
        if name is None:
            continue
        if name not in fields:
            raise KeyError(f"template for {task!r} needs field {name!r}")
        value = fields[name]
        if isinstance(value, ItemRef):
            segments.append(value)
        elif isinstance(value, (list, tuple)):
            if not value:
                segments.append(codec.text("(none)"))
            for i, ref in enumerate(value):
                if i:
                    segments.append(codec.text(" "))
                segments.append(ref)
        else:
            segments.append(codec.text(str(value)))
    return MixedSequence(segments)


def _record_seed(base: int, key: str) -> int:
    return zlib.crc32(f"{base}:{key}".encode()) & 0xFFFFFFFF


# -- records -------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingRecord:
    """One prompt/completion pair; loss applies from ``loss_boundary`` on."""

    task: str
    prompt: MixedSequence
    completion: MixedSequence
    key: str = ""

    @property
    def loss_boundary(self) -> int:
        return self.prompt.encoded_length()

    def to_json(self, v: Vocabulary) -> str:
        return json.dumps(
            {
                "task": self.task,
                "key": self.key,
                "prompt_ids": encode(self.prompt, v),
                "completion_ids": encode(self.completion, v),
                "loss_boundary": self.loss_boundary,
                "rendering": render(self.prompt, v) + render(self.completion, v),
            },
            ensure_ascii=False,
        )


def write_records(records: Iterable[TrainingRecord], v: Vocabulary, path: str | os.PathLike) -> int:
    lines = [r.to_json(v) for r in records]
    _atomic_write(Path(path), "".join(line + "\n" for line in lines).encode("utf-8"))
    return len(lines)


def read_records(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def _first_sentence(text: str) -> str:
    return re.split(r"(?<=[.!?])\s+", text.strip(), maxsplit=1)[0] if text.strip() else ""


def make_query(entry: CatalogEntry) -> str:
    """Retrieval query for an item: its title plus the first sentence of its description."""
    first = _first_sentence(entry.description)
    return f"{entry.title}. {first}" if first else entry.title


def build_alignment_records(
    entries: Sequence[CatalogEntry], registry: SidRegistry, v: Vocabulary, template_seed: int = 0
) -> list[TrainingRecord]:
    """Three records per item: SID->text, text->SID and SID->type."""
    codec = ByteCodec(v)
    records = []
    skipped = 0
    for e in sorted(entries, key=lambda e: e.item_id):
        if not e.title.strip():
            skipped += 1
            continue
        ref = ItemRef(e.item_type, registry.sid_of(e.item_id))
        seed = _record_seed(template_seed, e.item_id)
        descriptor = e.title if not e.description else f"{e.title}: {e.description}"
        records.append(
            TrainingRecord(
                "align_s2t",
                render_prompt("align_s2t", seed, {"item": ref}, v),
                MixedSequence([codec.text(descriptor)]),
                e.item_id,
            )
        )
        records.append(
            TrainingRecord(
                "align_t2s",
                render_prompt("align_t2s", seed, {"query": make_query(e), "item_type": e.item_type}, v),
                MixedSequence([ref]),
                e.item_id,
            )
        )
        records.append(
            TrainingRecord(
                "align_s2type",
                render_prompt("align_s2type", seed, {"item": ref}, v),
                MixedSequence([codec.text(e.item_type)]),
                e.item_id,
            )
        )
    if skipped:
        log.warning("skipped %d catalog entries with an empty title", skipped)
    return records


# -- logs ------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Interaction:
    user_id: str
    day: int
    item_id: str


def read_logs(path: str | os.PathLike) -> list[Interaction]:
    out = []
    prev = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected user_id, item_id, day_index")
            try:
                ev = Interaction(parts[0], int(parts[2]), parts[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: day_index {parts[2]!r} is not an integer") from None
            if prev is not None and (ev.user_id, ev.day) < (prev.user_id, prev.day):
                raise ValueError(f"{path}:{lineno}: log not sorted by (user_id, day_index)")
            prev = ev
            out.append(ev)
    return out


def write_logs(logs: Iterable[Interaction], path: str | os.PathLike) -> None:
    ordered = sorted(logs, key=lambda e: (e.user_id, e.day))
    data = "".join(f"{e.user_id}\t{e.item_id}\t{e.day}\n" for e in ordered)
    _atomic_write(Path(path), data.encode("utf-8"))


def group_by_user(logs: Iterable[Interaction]) -> dict[str, list[Interaction]]:
    users: dict[str, list[Interaction]] = defaultdict(list)
    for e in logs:
        users[e.user_id].append(e)
    return {u: sorted(evs, key=lambda e: e.day) for u, evs in sorted(users.items())}


@dataclass(frozen=True)
class EvalPair:
    user_id: str
    context: tuple[Interaction, ...]
    label: Interaction


def temporal_split(logs: Iterable[Interaction], t: int, k: int) -> tuple[list[Interaction], list[EvalPair]]:
    """Global split at day ``t`` with a ``k``-day gap before the label.

    Train keeps every event on or before day ``t``. Each user's eval pair has
    their events up to ``t`` as context and their first event on or after
    ``t + k`` as label; anything in between is dropped from both sides.
    """
    if k < 1:
        raise ValueError("gap k must be >= 1")
    logs = list(logs)
    train = [e for e in logs if e.day <= t]
    pairs = []
    for user, events in group_by_user(logs).items():
        later = [e for e in events if e.day >= t + k]
        if not later:
            continue
        context = tuple(e for e in events if e.day <= t)
        pairs.append(EvalPair(user, context, later[0]))
    return train, pairs


# -- instruction records -------------------------------------------------------


@dataclass
class InstructionOptions:
    template_seed: int = 0
    gap_days: int = 1
    max_history: int = MAX_HISTORY
    # user_id -> {"country": ..., "languages": ...}
    user_features: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    # (user_id, item_id) -> query text that led to the engagement
    queries: Mapping[tuple[str, str], str] = field(default_factory=dict)
    # user_id -> (cut index t, rationale for the item at position t)
    rationales: Mapping[str, tuple[int, str]] = field(default_factory=dict)
    # user_id -> interest summary
    summaries: Mapping[str, str] = field(default_factory=dict)


def sample_cut_points(logs: Iterable[Interaction], seed: int = 0) -> dict[str, int]:
    """Per user, an index ``t >= 1`` into their history; the item at ``t`` is the one to explain."""
    out = {}
    for user, events in group_by_user(logs).items():
        if len(events) >= 2:
            out[user] = random.Random(_record_seed(seed, user)).randrange(1, len(events))
    return out


def _refs(events: Sequence[Interaction], registry: SidRegistry, limit: int) -> list[ItemRef]:
    recent = list(events)[-limit:] if limit else []
    return [ItemRef(registry.type_of(e.item_id), registry.sid_of(e.item_id)) for e in recent]


def build_instruction_records(
    logs: Iterable[Interaction],
    task: str,
    catalog: Sequence[CatalogEntry],
    registry: SidRegistry,
    v: Vocabulary,
    options: InstructionOptions | None = None,
) -> list[TrainingRecord]:
    """Instruction-tuning records for one task family, sorted by user then item.

    ``recommend`` makes one record per user: the last event is the label and
    the history is every event at least ``gap_days`` earlier. ``retrieve``
    makes one record per logged engagement that has a query. ``recsplain``
    and ``profile`` need a rationale or summary for the user.
    """
    opts = options or InstructionOptions()
    if task not in ("recommend", "retrieve", "recsplain", "profile"):
        raise ValueError(f"unknown instruction task {task!r}")
    codec = ByteCodec(v)
    types = {e.item_id: e.item_type for e in catalog}
    logs = list(logs)
    events = [e for e in logs if e.item_id in registry]
    dropped = len(logs) - len(events)
    if dropped:
        log.warning("dropped %d events for items missing from the registry", dropped)

    records = []
    for user, history in group_by_user(events).items():
        feats = opts.user_features.get(user, {})
        base = {"country": feats.get("country", "unknown"), "languages": feats.get("languages", "unknown")}
        seed = _record_seed(opts.template_seed, f"{task}:{user}")

        if task == "recommend":
            if len(history) < 2:
                continue
            label = history[-1]
            context = [e for e in history[:-1] if e.day <= label.day - opts.gap_days]
            if not context:
                continue
            ref = ItemRef(types.get(label.item_id, registry.type_of(label.item_id)), registry.sid_of(label.item_id))
            fields = dict(base, history=_refs(context, registry, opts.max_history), item_type=ref.item_type)
            records.append(
                TrainingRecord(task, render_prompt(task, seed, fields, v), MixedSequence([ref]), f"{user}:{label.item_id}")
            )
        elif task == "retrieve":
            for e in history:
                if (user, e.item_id) not in opts.queries:
                    continue
                query = opts.queries[(user, e.item_id)]
                if not query.strip():
                    raise ValueError(f"empty query for user {user!r}, item {e.item_id!r}")
                ref = ItemRef(registry.type_of(e.item_id), registry.sid_of(e.item_id))
                fields = dict(base, query=query, item_type=ref.item_type)
                records.append(
                    TrainingRecord(
                        task,
                        render_prompt(task, _record_seed(seed, e.item_id), fields, v),
                        MixedSequence([ref]),
                        f"{user}:{e.item_id}",
                    )
                )
        elif task == "recsplain":
            if user not in opts.rationales or len(history) < 2:
                continue
            cut, rationale = opts.rationales[user]
            if not 1 <= cut < len(history):
                raise ValueError(f"cut point {cut} outside history of user {user!r}")
            if not rationale.strip():
                raise ValueError(f"empty rationale for user {user!r}")
            target = history[cut]
            ref = ItemRef(registry.type_of(target.item_id), registry.sid_of(target.item_id))
            fields = dict(base, history=_refs(history[:cut], registry, opts.max_history), item_type=ref.item_type)
            completion = MixedSequence([ref, codec.text(" " + rationale)])
            records.append(TrainingRecord(task, render_prompt(task, seed, fields, v), completion, f"{user}:{target.item_id}"))
        else:  # profile
            summary = opts.summaries.get(user, "")
            if not summary.strip():
                continue
            fields = dict(base, history=_refs(history, registry, opts.max_history))
            records.append(
                TrainingRecord(task, render_prompt(task, seed, fields, v), MixedSequence([codec.text(summary)]), user)
            )
    return records

