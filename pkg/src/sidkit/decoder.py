"""Catalog-valid generation: SID prefix tries, the span automaton, beam search and sampling.

Outside a span the decoder may emit any text token or ``[SID]``. Inside a
span every next token is restricted to children of the current trie node,
and ``[/SID]`` is allowed only once all ``M`` codes are out. Whatever the
scorer says, each generated span then names a registered item.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Collection, Mapping, Sequence

import numpy as np

from .catalog import SidRegistry, Vocabulary
from .quantizer import SemanticId
from .scorer import Scorer
from .sequence import SpanError, decode

DEFAULT_BEAM_WIDTH = 30


class NoValidItemsError(RuntimeError):
    pass


@dataclass(eq=False)
class TrieNode:
    children: dict[int, "TrieNode"] = field(default_factory=dict)
    tokens: np.ndarray = field(default=None, repr=False)  # token ids of the children, ascending code order
    item_id: str | None = None
    colliders: tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class SidTrie:
    item_type: str
    M: int
    root: TrieNode

    def leaves(self) -> list[tuple[SemanticId, TrieNode]]:
        out = []
        stack = [((), self.root)]
        while stack:
            prefix, node = stack.pop()
            if len(prefix) == self.M:
                out.append((prefix, node))
                continue
            for c in sorted(node.children, reverse=True):
                stack.append((prefix + (c,), node.children[c]))
        return out

    def node_count(self) -> int:
        count, stack = 0, [self.root]
        while stack:
            node = stack.pop()
            count += 1
            stack.extend(node.children.values())
        return count

    def walk(self, prefix: Sequence[int]) -> TrieNode | None:
        node = self.root
        for c in prefix:
            node = node.children.get(c)
            if node is None:
                return None
        return node


def _finalize(node: TrieNode, item_type: str, depth: int, v: Vocabulary | None) -> None:
    codes = sorted(node.children)
    if v is not None:
        node.tokens = np.array([v.sid_token_id(item_type, depth + 1, c) for c in codes], dtype=np.int64)
    for c in codes:
        _finalize(node.children[c], item_type, depth + 1, v)


def build_trie(
    registry: SidRegistry, item_type: str, v: Vocabulary | None = None, subset: Collection[str] | None = None
) -> SidTrie:
    """Prefix trie of every registered tuple of ``item_type``.

    With ``subset``, only tuples holding at least one listed item are kept;
    the leaf then resolves to the canonical item if it is listed, else to
    the first listed collider.
    """
    table = registry.buckets.get(item_type)
    if not table:
        raise NoValidItemsError(f"no registered items of type {item_type!r}")
    allowed = None if subset is None else set(subset)
    M = len(next(iter(table)))
    root = TrieNode()
    for sid in sorted(table):
        bucket = table[sid]
        if len(sid) != M:
            raise ValueError(f"{item_type!r} tuples have mixed lengths")
        if allowed is None:
            item = bucket.canonical
        elif bucket.canonical in allowed:
            item = bucket.canonical
        else:
            listed = [c for c in bucket.colliders if c in allowed]
            if not listed:
                continue
            item = listed[0]
        node = root
        for c in sid:
            node = node.children.setdefault(c, TrieNode())
        node.item_id = item
        node.colliders = bucket.colliders
    if not root.children:
        raise NoValidItemsError(f"no valid items of type {item_type!r} in the subset")
    _finalize(root, item_type, 0, v)
    return SidTrie(item_type, M, root)


def build_tries(registry: SidRegistry, v: Vocabulary, subset: Collection[str] | None = None) -> dict[str, SidTrie]:
    tries = {}
    for item_type in v.item_types:
        if item_type not in registry.buckets:
            continue
        try:
            tries[item_type] = build_trie(registry, item_type, v, subset)
        except NoValidItemsError:
            if subset is None:
                raise
    if not tries:
        raise NoValidItemsError("no valid items")
    return tries


# -- automaton -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DecodeState:
    """Where the decoder is relative to SID spans.

    ``position`` counts codes already emitted in the open span; ``node`` is the
    trie node reached by them (``None`` right after ``[SID]``).
    """

    inside: bool = False
    item_type: str | None = None
    node: TrieNode | None = None
    position: int = 0
    emitted: tuple[int, ...] = ()


_text_cache: dict[tuple[int, int], np.ndarray] = {}


def _outside_tokens(v: Vocabulary) -> np.ndarray:
    key = (v.text_token_count, v.sid_open)
    if key not in _text_cache:
        _text_cache[key] = np.append(np.arange(v.text_token_count, dtype=np.int64), v.sid_open)
    return _text_cache[key]


def _trie(tries: Mapping[str, SidTrie], item_type: str) -> SidTrie:
    try:
        return tries[item_type]
    except KeyError:
        raise KeyError(f"unknown item type {item_type!r}") from None


def allowed_tokens(
    state: DecodeState, tries: Mapping[str, SidTrie], v: Vocabulary, target_type: str | None = None
) -> np.ndarray:
    """Sorted array of token ids the automaton accepts next (possibly empty)."""
    if not state.inside:
        return _outside_tokens(v)
    if state.position == 0:
        if target_type is not None:
            return _trie(tries, target_type).root.tokens
        parts = [t.root.tokens for t in tries.values()]
        return np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
    trie = _trie(tries, state.item_type)
    if state.position == trie.M:
        return np.array([v.sid_close], dtype=np.int64)
    return state.node.tokens


def advance(state: DecodeState, token: int, tries: Mapping[str, SidTrie], v: Vocabulary) -> DecodeState:
    """Consume one token; raises :class:`SpanError` if the automaton rejects it."""
    token = int(token)
    idx = len(state.emitted)
    emitted = state.emitted + (token,)
    if not state.inside:
        if v.is_text(token):
            return replace(state, emitted=emitted)
        if token == v.sid_open:
            return DecodeState(True, None, None, 0, emitted)
        raise SpanError("stray SID token" if v.is_sid(token) else f"token {token} not allowed outside span", idx)
    if token == v.sid_close:
        if state.item_type is None or state.position != _trie(tries, state.item_type).M:
            raise SpanError("incomplete span", idx)
        return DecodeState(False, None, None, 0, emitted)
    if not v.is_sid(token):
        raise SpanError(f"token {token} not allowed inside span", idx)
    item_type, m, c = v.sid_token_info(token)
    if state.position == 0:
        node = _trie(tries, item_type).root
    elif item_type != state.item_type:
        raise SpanError("mixed item types in span", idx)
    else:
        node = state.node
    if m != state.position + 1:
        raise SpanError("position-order violation", idx)
    child = node.children.get(c)
    if child is None:
        raise SpanError("SID prefix not in catalog", idx)
    return DecodeState(True, item_type, child, m, emitted)


def initial_state(prompt_ids: Sequence[int], tries: Mapping[str, SidTrie], v: Vocabulary) -> DecodeState:
    state = DecodeState()
    for tok in prompt_ids:
        state = advance(state, tok, tries, v)
    return DecodeState(state.inside, state.item_type, state.node, state.position, ())


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    top = scores.max()
    if not np.isfinite(top):
        # scorer gave nothing allowed any mass: fall back to uniform
        return np.full(scores.shape, -math.log(len(scores)))
    return scores - (top + math.log(np.exp(scores - top).sum()))


# -- beam search ---------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    item_id: str
    item_type: str
    sid: SemanticId
    score: float


@dataclass
class GenerationResult:
    candidates: list[Candidate]
    sequences: list[list[int]]

    @property
    def item_ids(self) -> list[str]:
        return [c.item_id for c in self.candidates]


def constrained_beam_search(
    scorer: Scorer,
    prompt_ids: Sequence[int],
    tries: Mapping[str, SidTrie],
    v: Vocabulary,
    width: int = DEFAULT_BEAM_WIDTH,
    target_type: str | None = None,
    subset: Collection[str] | None = None,
    registry: SidRegistry | None = None,
) -> GenerationResult:
    """Beam search over exactly one SID span appended to ``prompt_ids``.

    A beam's score is the sum of the code tokens' log-probabilities, each
    renormalized over the tokens the trie allows at that step; delimiters
    are forced and unscored. Ties are broken by (type order, code tuple).
    ``subset`` restricts generation to the listed items and needs
    ``registry`` to rebuild the tries.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    if subset is not None:
        if registry is None:
            raise ValueError("subset restriction needs the registry")
        types = [target_type] if target_type is not None else list(tries)
        pruned = {}
        for t in types:
            try:
                pruned[t] = build_trie(registry, t, v, subset)
            except NoValidItemsError:
                pass
        if not pruned:
            raise NoValidItemsError("no valid items in the subset")
        tries = pruned

    prompt = [int(t) for t in prompt_ids]
    state = initial_state(prompt, tries, v)
    prefix: list[int] = []
    codes: tuple[int, ...] = ()
    if not state.inside:
        prefix = [v.sid_open]
        state = advance(state, v.sid_open, tries, v)
    elif state.position:
        codes = tuple(v.sid_token_info(t)[2] for t in _open_span_codes(prompt, v))
    type_rank = {t: i for i, t in enumerate(v.item_types)}

    def done(st: DecodeState) -> bool:
        return st.position > 0 and st.position == _trie(tries, st.item_type).M

    # (score, codes, generated tokens, state)
    beams = [(0.0, codes, prefix, state)]
    while not all(done(b[3]) for b in beams):
        ranked = []
        for bi, (score, cs, toks, st) in enumerate(beams):
            if done(st):
                ranked.append((score, type_rank[st.item_type], cs, bi, None))
                continue
            allowed = allowed_tokens(st, tries, v, target_type)
            if len(allowed) == 0:
                raise NoValidItemsError("no valid items")
            logits = scorer.next_scores(prompt + toks)
            logp = _log_softmax(np.asarray(logits)[allowed])
            for tok, lp in zip(allowed.tolist(), logp.tolist()):
                item_type, _, c = v.sid_token_info(tok)
                ranked.append((score + lp, type_rank[item_type], cs + (c,), bi, tok))
        ranked.sort(key=lambda r: (-r[0], r[1], r[2]))
        beams = [
            beams[bi] if tok is None else (s, cs, beams[bi][2] + [tok], advance(beams[bi][3], tok, tries, v))
            for s, _, cs, bi, tok in ranked[:width]
        ]

    candidates, sequences, seen = [], [], set()
    for score, cs, toks, st in beams:
        sequences.append(toks + [v.sid_close])
        item = st.node.item_id
        if item in seen:
            continue
        seen.add(item)
        candidates.append(Candidate(item, st.item_type, cs, score))
    return GenerationResult(candidates, sequences)


def _open_span_codes(ids: Sequence[int], v: Vocabulary) -> list[int]:
    out: list[int] = []
    for tok in ids:
        if tok == v.sid_open:
            out = []
        elif v.is_sid(tok):
            out.append(tok)
    return out


def _open_tail(ids: Sequence[int], v: Vocabulary) -> list[int]:
    """Tokens from an unclosed ``[SID]`` at the end of ``ids`` (empty if none)."""
    start = None
    for i, tok in enumerate(ids):
        if tok == v.sid_open:
            start = i
        elif tok == v.sid_close:
            start = None
    return [] if start is None else list(ids[start:])


# -- sampling ------------------------------------------------------------------


def top_p_filter(logits: np.ndarray, temperature: float, top_k: int, top_p: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices kept after temperature, top-k and nucleus filtering, with their renormalized probabilities.

    Probability ties keep the lower index first.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    if not 0 < top_p <= 1:
        raise ValueError("top_p must be in (0, 1]")
    logp = _log_softmax(np.asarray(logits, dtype=np.float64) / temperature)
    probs = np.exp(logp)
    order = np.argsort(-probs, kind="stable")
    if top_k and top_k > 0:
        order = order[:top_k]
    kept = probs[order]
    kept = kept / kept.sum()
    cut = int(np.searchsorted(np.cumsum(kept), top_p - 1e-12)) + 1
    order, kept = order[:cut], kept[:cut]
    return order, kept / kept.sum()


def sample_top_p(
    scorer: Scorer,
    prompt_ids: Sequence[int],
    tries: Mapping[str, SidTrie],
    v: Vocabulary,
    temperature: float = 0.6,
    top_k: int = 20,
    top_p: float = 0.95,
    seed: int = 0,
    max_len: int = 64,
    target_type: str | None = None,
) -> list[int]:
    """Constrained ancestral sampling; returns the generated tokens only.

    Stops after end-of-text or ``max_len`` tokens, but never inside an open
    span: a span started before the limit is always completed.
    """
    rng = np.random.default_rng(seed)
    prompt = [int(t) for t in prompt_ids]
    state = initial_state(prompt, tries, v)
    out: list[int] = []
    while True:
        if not state.inside and (len(out) >= max_len or (out and out[-1] == v.eos_id)):
            return out
        allowed = allowed_tokens(state, tries, v, target_type)
        if len(allowed) == 0:
            raise NoValidItemsError("no valid items")
        logits = np.asarray(scorer.next_scores(prompt + out))[allowed]
        idx, probs = top_p_filter(logits, temperature, top_k, top_p)
        tok = int(allowed[idx[rng.choice(len(idx), p=probs)]])
        state = advance(state, tok, tries, v)
        out.append(tok)


# -- unconstrained -------------------------------------------------------------


def spans_resolve(ids: Sequence[int], v: Vocabulary, registry: SidRegistry) -> bool:
    """True iff ``ids`` parse under the span grammar and every span names a registered tuple."""
    try:
        seq = decode(ids, v)
    except SpanError:
        return False
    return all(registry.resolve(r.item_type, r.sid) is not None for r in seq.item_refs)


def unconstrained_generate(
    scorer: Scorer,
    prompt_ids: Sequence[int],
    v: Vocabulary,
    registry: SidRegistry,
    mode: str = "greedy",
    max_len: int = 16,
    seed: int = 0,
    temperature: float = 1.0,
) -> tuple[list[int], bool]:
    """Decode over the full vocabulary with no trie masking.

    ``mode`` is ``greedy`` or ``sample``. Generation ends at the first closed
    span, at end-of-text, or after ``max_len`` tokens. The flag reports
    whether the output (with any span left open by the prompt) parses and
    every span resolves in ``registry``.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    prompt = [int(t) for t in prompt_ids]
    out: list[int] = []
    while len(out) < max_len:
        logits = np.asarray(scorer.next_scores(prompt + out), dtype=np.float64)
        if mode == "greedy":
            tok = int(np.argmax(logits))
        else:
            probs = np.exp(_log_softmax(logits / temperature))
            tok = int(rng.choice(len(probs), p=probs))
        out.append(tok)
        if tok in (v.sid_close, v.eos_id):
            break
    return out, spans_resolve(_open_tail(prompt, v) + out, v, registry)
