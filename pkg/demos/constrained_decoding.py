"""
Catalog-constrained decoding
============================

Build a tiny catalog, turn it into per-type prefix tries, then decode with a
scorer that knows nothing about the catalog.  The constraints alone
guarantee every generated span names a real item.
"""

import numpy as np

from sidkit.catalog import CatalogEntry, Vocabulary, resolve_collisions
from sidkit.decoder import build_tries, constrained_beam_search, sample_top_p, unconstrained_generate
from sidkit.scorer import UniformScorer
from sidkit.sequence import ByteCodec, ItemRef, MixedSequence, Text, decode, encode, render

v = Vocabulary.build([("episode", 2, 4), ("audiobook", 2, 4)], 257)
print("vocab size:", v.vocab_size, " [SID] =", v.sid_open, " [/SID] =", v.sid_close)

rng = np.random.default_rng(0)
entries = []
for i in range(6):
    t = "episode" if i < 4 else "audiobook"
    sid = tuple(int(c) for c in rng.integers(0, 4, 2))
    entries.append(CatalogEntry(f"{t[:2]}{i}", t, float(rng.integers(1, 100)), 0, f"Item {i}", "Desc.", sid))
registry = resolve_collisions(entries)
for e in entries:
    print(e.item_id, e.item_type, e.sid, "->", registry.resolve(e.item_type, e.sid))

# %%
# Prompts mix text and item references in one token stream.
codec = ByteCodec(v)
prompt_seq = MixedSequence([Text(codec.encode("liked ")), ItemRef("episode", entries[0].sid), Text(codec.encode(" next:"))])
prompt = encode(prompt_seq, v)
print(prompt)
print(render(decode(prompt, v), v))

# %%
# A random scorer still only ever yields catalog items under the tries.
tries = build_tries(registry, v)


class NoiseScorer:
    vocab_size = v.vocab_size

    def next_scores(self, context):
        return np.random.default_rng(len(context) * 7919 + context[-1]).normal(0, 3, v.vocab_size)


res = constrained_beam_search(NoiseScorer(), prompt, tries, v, width=4)
for c in res.candidates:
    print("%-4s %-9s %s %.3f" % (c.item_id, c.item_type, c.sid, c.score))

only_books = constrained_beam_search(NoiseScorer(), prompt, tries, v, width=4, target_type="audiobook")
print("audiobooks only:", only_books.item_ids)

out = sample_top_p(UniformScorer(v.vocab_size), prompt + [v.sid_open], tries, v, 1.0, 20, 0.9, seed=3, max_len=3)
print("sampled span:", [v.sid_open] + out)

# %%
# Without the tries the same noise rarely lands on a real item.
ok = [unconstrained_generate(NoiseScorer(), prompt + [v.sid_open], v, registry, "sample", max_len=4, seed=s)[1] for s in range(200)]
print("unconstrained valid fraction: %.2f" % np.mean(ok))
