"""Small shared builders for tests."""

from __future__ import annotations

import itertools
import math
import random

import numpy as np

from sidkit.catalog import CatalogEntry, SidRegistry, Vocabulary, resolve_collisions


def entry(item_id, item_type="episode", sid=None, popularity=1.0, title=None, description="A show. More text."):
    return CatalogEntry(item_id, item_type, popularity, 0, title if title is not None else f"Title {item_id}", description, sid)


def registry_from(tuples_by_type: dict[str, list[tuple[int, ...]]]) -> SidRegistry:
    """One item per tuple, named ``<type>-<codes>``."""
    entries = []
    for item_type, tuples in tuples_by_type.items():
        for sid in tuples:
            entries.append(entry(f"{item_type}-{'.'.join(map(str, sid))}", item_type, sid))
    return resolve_collisions(entries)


def random_registry(rng: random.Random, shapes: dict[str, tuple[int, int]], max_tuples: int) -> SidRegistry:
    out = {}
    for item_type, (M, K) in shapes.items():
        space = list(itertools.product(range(K), repeat=M))
        n = rng.randint(1, min(max_tuples, len(space)))
        out[item_type] = sorted(rng.sample(space, n))
    return registry_from(out)


class TableScorer:
    """Deterministic pseudo-random log-scores keyed on the full context."""

    def __init__(self, vocab_size: int, seed: int = 0):
        self.vocab_size = vocab_size
        self.seed = seed

    def next_scores(self, context):
        h = hash((self.seed, tuple(int(t) for t in context))) & 0xFFFFFFFF
        return np.random.default_rng(h).normal(0, 2, self.vocab_size)


class AdversarialScorer:
    """Pushes mass onto tokens that break catalog validity.

    Outside a span it prefers [SID]; inside it prefers a code that no
    registered tuple uses, then an early [/SID], then text.
    """

    def __init__(self, v: Vocabulary, registry: SidRegistry, seed: int = 0):
        self.v = v
        self.vocab_size = v.vocab_size
        self.registry = registry
        self.rng = np.random.default_rng(seed)

    def next_scores(self, context):
        v = self.v
        s = self.rng.normal(0, 0.1, self.vocab_size)
        inside = [t for t in context[::-1]]
        depth = 0
        for t in inside:
            if t == v.sid_open:
                break
            if t == v.sid_close:
                depth = -1
                break
            depth += 1
        else:
            depth = -1
        if depth < 0:
            s[v.sid_open] += 20
            return s
        # favor the largest code of every block (rarely registered) and a premature close
        for b in v.type_blocks:
            for m in range(b.M):
                s[b.base_offset + m * b.K + b.K - 1] += 15
        s[v.sid_close] += 12 if depth < 2 else 5
        s[65] += 10
        return s


def _log_softmax(x):
    x = np.asarray(x, dtype=np.float64)
    m = x.max()
    return x - (m + math.log(np.exp(x - m).sum()))


def exhaustive_ranking(scorer, prompt, reg, v, target_type=None):
    """Oracle: score every registered tuple with the same per-step renormalization."""
    types = [target_type] if target_type else [t for t in v.item_types if t in reg.buckets]
    all_tuples = [(t, sid) for t in types for sid in reg.tuples(t)]
    rank = {t: i for i, t in enumerate(v.item_types)}
    out = []
    for t, sid in all_tuples:
        ctx = list(prompt) + [v.sid_open]
        score = 0.0
        for m in range(len(sid)):
            # allowed codes: tuples in scope that share the prefix so far
            if m == 0:
                allowed = sorted({v.sid_token_id(tt, 1, s[0]) for tt, s in all_tuples})
            else:
                allowed = sorted({v.sid_token_id(t, m + 1, s[m]) for tt, s in all_tuples if tt == t and s[:m] == sid[:m]})
            lp = _log_softmax(np.asarray(scorer.next_scores(ctx))[allowed])
            tok = v.sid_token_id(t, m + 1, sid[m])
            score += lp[allowed.index(tok)]
            ctx.append(tok)
        out.append((score, rank[t], sid, t))
    out.sort(key=lambda r: (-r[0], r[1], r[2]))
    return [(reg.resolve(t, sid), s) for s, _, sid, t in out]
