"""Next-token scorers over the unified vocabulary.

Anything with ``vocab_size`` and ``next_scores(context) -> log-scores`` can
drive the decoders; this is where a fine-tuned language model plugs in.
Two references ship here: a constant scorer and an add-alpha trigram.
"""

from __future__ import annotations

import math
import os
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .embeddings import _atomic_write

PAD = -1


class Scorer(Protocol):
    vocab_size: int

    def next_scores(self, context: Sequence[int]) -> np.ndarray:
        """Log-scores for every token id, shape ``(vocab_size,)``."""
        ...


class UniformScorer:
    def __init__(self, vocab_size: int):
        if vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        self.vocab_size = vocab_size
        self._scores = np.full(vocab_size, -math.log(vocab_size))
        self._scores.setflags(write=False)

    def next_scores(self, context: Sequence[int]) -> np.ndarray:
        return self._scores


def uniform_scorer(vocab_size: int) -> UniformScorer:
    return UniformScorer(vocab_size)


class TrigramTable:
    """Add-alpha smoothed trigram model; unseen contexts get a uniform distribution.

    Tokens listed in ``ignore`` are removed from training sequences and from
    query contexts, so the model conditions on the two most recent
    non-ignored tokens. Passing the span delimiters here lets the first code
    of an item see the codes of the item before it.
    """

    def __init__(self, counts: dict[tuple[int, int], Counter], alpha: float, vocab_size: int, ignore: Iterable[int] = ()):
        if alpha <= 0:
            raise ValueError("alpha must be > 0")
        self.alpha = float(alpha)
        self.vocab_size = int(vocab_size)
        self.ignore = frozenset(int(t) for t in ignore)
        self.counts = counts
        self._uniform = np.full(self.vocab_size, -math.log(self.vocab_size))
        self._tables = {}
        for ctx, ctr in counts.items():
            ids = np.fromiter(ctr.keys(), dtype=np.int64, count=len(ctr))
            cnt = np.fromiter(ctr.values(), dtype=np.float64, count=len(ctr))
            self._tables[ctx] = (ids, cnt, cnt.sum())

    def context_key(self, context: Sequence[int]) -> tuple[int, int]:
        kept = []
        for tok in reversed(context):
            if tok in self.ignore:
                continue
            kept.append(int(tok))
            if len(kept) == 2:
                break
        kept += [PAD] * (2 - len(kept))
        return kept[1], kept[0]

    def next_scores(self, context: Sequence[int]) -> np.ndarray:
        entry = self._tables.get(self.context_key(context))
        if entry is None:
            return self._uniform.copy()
        ids, cnt, total = entry
        denom = total + self.alpha * self.vocab_size
        scores = np.full(self.vocab_size, math.log(self.alpha / denom))
        scores[ids] = np.log((cnt + self.alpha) / denom)
        return scores

    def save(self, path: str | os.PathLike) -> None:
        lines = [f"alpha={self.alpha!r}\tvocab_size={self.vocab_size}\tignore={','.join(map(str, sorted(self.ignore)))}"]
        for (a, b) in sorted(self.counts):
            for w, c in sorted(self.counts[(a, b)].items()):
                lines.append(f"{a}\t{b}\t{w}\t{c}")
        _atomic_write(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TrigramTable":
        with open(path, encoding="utf-8") as f:
            header = dict(field.split("=", 1) for field in f.readline().rstrip("\n").split("\t"))
            counts: dict[tuple[int, int], Counter] = defaultdict(Counter)
            for lineno, line in enumerate(f, 2):
                parts = line.split("\t")
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
                a, b, w, c = map(int, parts)
                counts[(a, b)][w] = c
        ignore = [int(t) for t in header.get("ignore", "").split(",") if t]
        return cls(dict(counts), float(header["alpha"]), int(header["vocab_size"]), ignore)


def train_trigram(
    corpus: Iterable[Sequence[int]], alpha: float, vocab_size: int, ignore: Iterable[int] = ()
) -> TrigramTable:
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    ignore = frozenset(ignore)
    counts: dict[tuple[int, int], Counter] = defaultdict(Counter)
    n_seqs = 0
    for seq in corpus:
        n_seqs += 1
        a, b = PAD, PAD
        for tok in seq:
            if tok in ignore:
                continue
            if not 0 <= tok < vocab_size:
                raise ValueError(f"token {tok} outside vocabulary of size {vocab_size}")
            counts[(a, b)][int(tok)] += 1
            a, b = b, int(tok)
    if n_seqs == 0:
        raise ValueError("empty corpus")
    return TrigramTable(dict(counts), alpha, vocab_size, ignore)
