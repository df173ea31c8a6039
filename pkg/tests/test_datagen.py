import random

import pytest
from fixtures import entry
from hypothesis import given, settings
from hypothesis import strategies as st

from sidkit.catalog import Vocabulary, resolve_collisions
from sidkit.datagen import (
    InstructionOptions,
    Interaction,
    build_alignment_records,
    build_instruction_records,
    make_query,
    read_logs,
    read_records,
    render_prompt,
    sample_cut_points,
    temporal_split,
    write_logs,
    write_records,
)
from sidkit.sequence import ItemRef, Text, decode, encode

V = Vocabulary.build([("episode", 2, 4), ("book", 2, 4)], 257)


def _catalog():
    return [
        entry("e1", "episode", (0, 1), description="First one. Longer tail."),
        entry("e2", "episode", (1, 1)),
        entry("e3", "episode", (2, 3)),
        entry("b1", "book", (0, 0), description="A novel! With a twist."),
    ]


def _registry():
    return resolve_collisions(_catalog())


def test_render_prompt_is_deterministic_and_counts_spans():
    refs = [ItemRef("episode", (0, 1)), ItemRef("episode", (1, 1)), ItemRef("book", (0, 0))]
    fields = {"history": refs, "country": "SE", "languages": "sv", "item_type": "episode"}
    a = render_prompt("recommend", 7, fields, V)
    assert a == render_prompt("recommend", 7, fields, V)
    assert len(a.item_refs) == 3
    assert encode(a, V).count(V.sid_open) == 3


def test_render_prompt_errors():
    with pytest.raises(ValueError):
        render_prompt("chat", 0, {}, V)
    with pytest.raises(KeyError, match="history"):
        render_prompt("recommend", 0, {"country": "x", "languages": "y", "item_type": "book"}, V)


def test_make_query_uses_first_sentence():
    assert make_query(entry("x", title="Dune", description="Sand planet. Worms.")) == "Dune. Sand planet."
    assert make_query(entry("x", title="Dune", description="")) == "Dune"


def test_alignment_records():
    reg = _registry()
    recs = build_alignment_records(_catalog()[:1], reg, V)
    assert [r.task for r in recs] == ["align_s2t", "align_t2s", "align_s2type"]
    s2t, t2s, s2type = recs
    assert s2t.prompt.item_refs == [ItemRef("episode", (0, 1))]
    assert decode(encode(t2s.completion, V), V).item_refs == [ItemRef("episode", reg.sid_of("e1"))]
    assert bytes(s2type.completion.segments[0].tokens).decode() == "episode"
    assert len(build_alignment_records(_catalog(), reg, V)) == 12


def test_alignment_skips_empty_titles(caplog):
    es = [entry("a", sid=(0, 0), title=""), entry("b", sid=(0, 1))]
    recs = build_alignment_records(es, resolve_collisions(es), V)
    assert len(recs) == 3
    assert "1 catalog entries" in caplog.text


def test_records_file_and_loss_boundary(tmp_path):
    recs = build_alignment_records(_catalog(), _registry(), V)
    n = write_records(recs, V, tmp_path / "r.jsonl")
    rows = read_records(tmp_path / "r.jsonl")
    assert n == len(rows) == 12
    for rec, row in zip(recs, rows):
        assert row["loss_boundary"] == len(row["prompt_ids"]) == rec.loss_boundary
        assert "[SID]" in row["rendering"]


# -- logs and splits --------------------------------------------------------------


def test_logs_round_trip_sorted(tmp_path):
    logs = [Interaction("u2", 3, "e1"), Interaction("u1", 5, "e2"), Interaction("u1", 1, "e3")]
    write_logs(logs, tmp_path / "l.tsv")
    assert (tmp_path / "l.tsv").read_text().splitlines()[0] == "u1\te3\t1"
    assert read_logs(tmp_path / "l.tsv") == sorted(logs)


def test_read_logs_rejects_unsorted(tmp_path):
    (tmp_path / "l.tsv").write_text("u1\te1\t5\nu1\te2\t3\n")
    with pytest.raises(ValueError, match=r"l\.tsv:2"):
        read_logs(tmp_path / "l.tsv")


def test_temporal_split_hand_example():
    logs = [Interaction("u", 1, "a"), Interaction("u", 2, "b"), Interaction("u", 9, "c")]
    train, pairs = temporal_split(logs, 2, 7)
    assert train == logs[:2]
    assert len(pairs) == 1
    assert [e.day for e in pairs[0].context] == [1, 2] and pairs[0].label == logs[2]


def test_temporal_split_no_future():
    logs = [Interaction("u", d, "a") for d in (1, 2, 3)]
    assert temporal_split(logs, 5, 1)[1] == []
    with pytest.raises(ValueError):
        temporal_split(logs, 5, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 30), st.integers(1, 10))
def test_split_has_no_leakage(seed, t, k):
    rng = random.Random(seed)
    logs = sorted(Interaction(f"u{rng.randrange(6)}", rng.randrange(40), f"i{rng.randrange(9)}") for _ in range(60))
    train, pairs = temporal_split(logs, t, k)
    assert all(e.day <= t for e in train)
    for p in pairs:
        assert all(e.day <= t for e in p.context)
        assert p.label.day >= t + k
        assert not any(t < e.day < t + k for e in p.context + (p.label,))


# -- instruction records ----------------------------------------------------------


def _history_logs():
    return [Interaction("u1", 1, "e1"), Interaction("u1", 2, "e2"), Interaction("u1", 5, "e3"), Interaction("u2", 1, "b1")]


def test_recommend_record_hand_example():
    reg = _registry()
    recs = build_instruction_records(_history_logs(), "recommend", _catalog(), reg, V, InstructionOptions(gap_days=2))
    assert len(recs) == 1  # u2 has a single event
    r = recs[0]
    assert r.prompt.item_refs == [ItemRef("episode", reg.sid_of("e1")), ItemRef("episode", reg.sid_of("e2"))]
    assert r.completion.item_refs == [ItemRef("episode", reg.sid_of("e3"))]
    # a wider gap drops e2 from the history
    wide = build_instruction_records(_history_logs(), "recommend", _catalog(), reg, V, InstructionOptions(gap_days=4))
    assert len(wide[0].prompt.item_refs) == 1


def test_retrieve_records_and_empty_query():
    reg = _registry()
    opts = InstructionOptions(queries={("u1", "e2"): "calm history podcast"})
    recs = build_instruction_records(_history_logs(), "retrieve", _catalog(), reg, V, opts)
    assert len(recs) == 1 and recs[0].completion.item_refs == [ItemRef("episode", reg.sid_of("e2"))]
    with pytest.raises(ValueError, match="empty query"):
        build_instruction_records(_history_logs(), "retrieve", _catalog(), reg, V, InstructionOptions(queries={("u1", "e2"): " "}))


def test_recsplain_completion_is_ref_then_text():
    reg = _registry()
    cuts = sample_cut_points(_history_logs(), seed=3)
    assert set(cuts) == {"u1"} and 1 <= cuts["u1"] < 3
    opts = InstructionOptions(rationales={"u1": (cuts["u1"], "Because you liked the last one.")})
    (rec,) = build_instruction_records(_history_logs(), "recsplain", _catalog(), reg, V, opts)
    seg = decode(encode(rec.completion, V), V).segments
    assert isinstance(seg[0], ItemRef) and isinstance(seg[1], Text) and seg[1].tokens
    assert len(rec.prompt.item_refs) == cuts["u1"]


def test_profile_records():
    opts = InstructionOptions(summaries={"u2": "Likes novels."})
    (rec,) = build_instruction_records(_history_logs(), "profile", _catalog(), _registry(), V, opts)
    assert rec.key.startswith("u2")
    assert rec.completion.item_refs == []


def test_records_only_use_registered_tuples():
    reg = _registry()
    logs = _history_logs() + [Interaction("u3", 1, "ghost"), Interaction("u3", 2, "e1"), Interaction("u3", 4, "e2")]
    for task in ("recommend",):
        for r in build_instruction_records(sorted(logs), task, _catalog(), reg, V):
            for ref in r.prompt.item_refs + r.completion.item_refs:
                assert reg.resolve(ref.item_type, ref.sid) is not None


def test_unknown_instruction_task():
    with pytest.raises(ValueError):
        build_instruction_records([], "chat", _catalog(), _registry(), V)
