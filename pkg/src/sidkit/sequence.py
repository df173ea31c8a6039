"""Mixed text/SID sequences and their token encoding.

An item reference is always encoded as one delimited span::

    [SID] tok(type, 1, c1) ... tok(type, M, cM) [/SID]

Text tokens never appear inside a span and SID tokens never appear
outside one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .catalog import Vocabulary
from .quantizer import SemanticId


class SpanError(ValueError):
    """A token sequence violates the span grammar."""

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} at token {index}")
        self.reason = message
        self.index = index


@dataclass(frozen=True)
class Text:
    tokens: tuple[int, ...]

    def __init__(self, tokens: Iterable[int]):
        object.__setattr__(self, "tokens", tuple(int(t) for t in tokens))


@dataclass(frozen=True)
class ItemRef:
    item_type: str
    sid: SemanticId

    def __init__(self, item_type: str, sid: Sequence[int]):
        object.__setattr__(self, "item_type", item_type)
        object.__setattr__(self, "sid", tuple(int(c) for c in sid))


Segment = Union[Text, ItemRef]


@dataclass(frozen=True)
class MixedSequence:
    """Alternating text runs and typed item references.

    Adjacent text segments are merged and empty ones dropped, so every
    sequence has a single canonical form and ``decode(encode(s)) == s``.
    """

    segments: tuple[Segment, ...]

    def __init__(self, segments: Iterable[Segment] = ()):
        merged: list[Segment] = []
        for seg in segments:
            if isinstance(seg, Text):
                if not seg.tokens:
                    continue
                if merged and isinstance(merged[-1], Text):
                    merged[-1] = Text(merged[-1].tokens + seg.tokens)
                    continue
            elif not isinstance(seg, ItemRef):
                raise TypeError(f"not a segment: {seg!r}")
            merged.append(seg)
        object.__setattr__(self, "segments", tuple(merged))

    def __add__(self, other: "MixedSequence") -> "MixedSequence":
        return MixedSequence(self.segments + other.segments)

    @property
    def item_refs(self) -> list[ItemRef]:
        return [s for s in self.segments if isinstance(s, ItemRef)]

    def encoded_length(self) -> int:
        return sum(len(s.tokens) if isinstance(s, Text) else len(s.sid) + 2 for s in self.segments)


def encode(seq: MixedSequence, v: Vocabulary) -> list[int]:
    out: list[int] = []
    for seg in seq.segments:
        if isinstance(seg, Text):
            for t in seg.tokens:
                if not v.is_text(t):
                    raise ValueError(f"token {t} is not a text token")
            out.extend(seg.tokens)
        else:
            block = v.block(seg.item_type)
            if len(seg.sid) != block.M:
                raise ValueError(f"{seg.item_type!r} SIDs have {block.M} codes, got {len(seg.sid)}")
            out.append(v.sid_open)
            out.extend(v.sid_token_id(seg.item_type, m, c) for m, c in enumerate(seg.sid, 1))
            out.append(v.sid_close)
    return out


def decode(ids: Sequence[int], v: Vocabulary) -> MixedSequence:
    segments: list[Segment] = []
    text: list[int] = []
    span: list[int] | None = None  # codes of the open span
    span_type = None
    for i, tok in enumerate(ids):
        tok = int(tok)
        if span is None:
            if v.is_text(tok):
                text.append(tok)
            elif tok == v.sid_open:
                if text:
                    segments.append(Text(text))
                    text = []
                span, span_type = [], None
            elif tok == v.sid_close:
                raise SpanError("[/SID] without [SID]", i)
            elif v.is_sid(tok):
                raise SpanError("stray SID token", i)
            else:
                raise SpanError(f"unknown token {tok}", i)
            continue

        if tok == v.sid_close:
            if span_type is None or len(span) != v.block(span_type).M:
                raise SpanError("incomplete span", i)
            segments.append(ItemRef(span_type, span))
            span = None
        elif tok == v.sid_open:
            raise SpanError("nested [SID]", i)
        elif v.is_sid(tok):
            item_type, m, c = v.sid_token_info(tok)
            if span_type is None:
                span_type = item_type
            elif item_type != span_type:
                raise SpanError(f"mixed item types in span ({span_type!r}, {item_type!r})", i)
            if m != len(span) + 1:
                raise SpanError(f"position-order violation (got position {m}, expected {len(span) + 1})", i)
            span.append(c)
        elif v.is_text(tok):
            raise SpanError("text token inside span", i)
        else:
            raise SpanError(f"unknown token {tok}", i)
    if span is not None:
        raise SpanError("unclosed span", len(ids))
    if text:
        segments.append(Text(text))
    return MixedSequence(segments)


class ByteCodec:
    """UTF-8 bytes as text tokens 0..255; the vocabulary's last text id is end-of-text."""

    def __init__(self, v: Vocabulary):
        if v.text_token_count < 257:
            raise ValueError("byte-level text needs text_token_count >= 257")
        self.v = v

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, tokens: Iterable[int]) -> str:
        return bytes(t for t in tokens if t < 256).decode("utf-8", errors="replace")

    def text(self, s: str) -> Text:
        return Text(self.encode(s))


def render(seq: MixedSequence, v: Vocabulary) -> str:
    """Human-readable form, e.g. ``play [SID]episode 3 17[/SID] next``."""
    parts = []
    for seg in seq.segments:
        if isinstance(seg, Text):
            if v.text_token_count >= 257:
                parts.append(bytes(t for t in seg.tokens if t < 256).decode("utf-8", errors="replace"))
                if v.eos_id in seg.tokens:
                    parts.append("<eos>")
            else:
                parts.append("<" + " ".join(map(str, seg.tokens)) + ">")
        else:
            parts.append(f"[SID]{seg.item_type} {' '.join(map(str, seg.sid))}[/SID]")
    return "".join(parts)
