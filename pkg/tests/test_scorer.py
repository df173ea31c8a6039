import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sidkit.catalog import Vocabulary
from sidkit.scorer import TrigramTable, train_trigram, uniform_scorer
from sidkit.sequence import ItemRef, MixedSequence, encode


def test_argmax_after_bigram():
    table = train_trigram([[1, 2, 3], [1, 2, 3]], 0.1, 10)
    assert int(np.argmax(table.next_scores([1, 2]))) == 3
    # hand count: 2 of 2 continuations, alpha 0.1 over 10 tokens
    assert table.next_scores([1, 2])[3] == pytest.approx(math.log(2.1 / 3.0))


def test_unseen_context_is_uniform():
    table = train_trigram([[1, 2, 3]], 0.5, 7)
    np.testing.assert_allclose(table.next_scores([6, 6]), -math.log(7))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.lists(st.integers(0, 11), max_size=12), min_size=1, max_size=6),
    st.lists(st.integers(0, 11), max_size=4),
    st.floats(1e-3, 2.0),
)
def test_scores_form_a_distribution(corpus, context, alpha):
    table = train_trigram(corpus, alpha, 12)
    s = table.next_scores(context)
    assert s.shape == (12,)
    assert math.fsum(np.exp(s)) == pytest.approx(1.0, abs=1e-9)


def test_training_errors():
    with pytest.raises(ValueError):
        train_trigram([], 0.1, 5)
    with pytest.raises(ValueError):
        train_trigram([[1]], 0.0, 5)
    with pytest.raises(ValueError):
        train_trigram([[9]], 0.1, 5)


def test_ignored_tokens_are_skipped_in_context():
    table = train_trigram([[1, 9, 2, 3]], 0.01, 10, ignore=[9])
    assert table.context_key([1, 9, 2]) == (1, 2)
    assert int(np.argmax(table.next_scores([1, 9, 2, 9]))) == 3


def test_item_follows_item_through_delimiters():
    v = Vocabulary.build([("episode", 2, 4)], 257)
    W, X = ItemRef("episode", (1, 2)), ItemRef("episode", (3, 0))
    corpus = [encode(MixedSequence([W, X]), v) for _ in range(5)]
    corpus.append(encode(MixedSequence([ItemRef("episode", (0, 0)), ItemRef("episode", (2, 2))]), v))
    table = train_trigram(corpus, 0.01, v.vocab_size, ignore=(v.sid_open, v.sid_close))
    ctx = encode(MixedSequence([W]), v) + [v.sid_open]
    assert int(np.argmax(table.next_scores(ctx))) == v.sid_token_id("episode", 1, 3)


def test_save_load_round_trip(tmp_path):
    table = train_trigram([[1, 2, 3, 4], [2, 3, 1]], 0.25, 6, ignore=[5])
    p = tmp_path / "t.tsv"
    table.save(p)
    assert p.read_text().splitlines()[0] == "alpha=0.25\tvocab_size=6\tignore=5"
    back = TrigramTable.load(p)
    for ctx in ([], [1], [1, 2], [3, 1], [5, 2]):
        np.testing.assert_array_equal(back.next_scores(ctx), table.next_scores(ctx))
    table.save(tmp_path / "u.tsv")
    assert p.read_bytes() == (tmp_path / "u.tsv").read_bytes()


def test_uniform_scorer():
    s = uniform_scorer(5)
    assert len(set(s.next_scores([1]).tolist())) == 1
    np.testing.assert_array_equal(s.next_scores([]), s.next_scores([4, 4, 4]))
    with pytest.raises(ValueError):
        uniform_scorer(0)
