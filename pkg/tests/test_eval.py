import math

import numpy as np
import pytest
from fixtures import registry_from
from hypothesis import given, settings
from hypothesis import strategies as st

from sidkit.catalog import Vocabulary
from sidkit.embeddings import EmbeddingMatrix
from sidkit.eval import (
    EvalRecord,
    NeighborhoodSnapshot,
    hit_rate_at_k,
    jaccard_stability,
    knn_topn,
    metrics_rows,
    ndcg_at_k,
    valid_sid_rate,
    write_metrics_report,
)


def rec(rank, user="u", n=40):
    """Record whose label sits at 1-based ``rank`` (None: absent)."""
    ranked = [f"x{i}" for i in range(n)]
    if rank is not None:
        ranked[rank - 1] = "L"
    return EvalRecord(user, ranked, "L")


def test_hit_rate_examples():
    assert hit_rate_at_k([rec(1), rec(1)], 10) == 1.0
    assert hit_rate_at_k([rec(1), rec(12), rec(5)], 10) == pytest.approx(2 / 3)
    assert hit_rate_at_k([rec(None)], 10) == 0.0


def test_ndcg_examples():
    assert ndcg_at_k([rec(1)], 10) == 1.0
    assert ndcg_at_k([rec(3)], 10) == 0.5
    assert ndcg_at_k([rec(11)], 10) == 0.0


def test_ten_user_fixture():
    ranks = [1, 2, 3, 4, 7, 10, 11, 25, None, 30]
    records = [rec(r, f"u{i}") for i, r in enumerate(ranks)]
    for K in (1, 5, 10, 30):
        hr = sum(1 for r in ranks if r is not None and r <= K) / 10
        nd = sum(1 / math.log2(r + 1) for r in ranks if r is not None and r <= K) / 10
        assert abs(hit_rate_at_k(records, K) - hr) < 1e-9
        assert abs(ndcg_at_k(records, K) - nd) < 1e-9
    # hand values at K=10: ranks 1,2,3,4,7,10 hit
    assert hit_rate_at_k(records, 10) == pytest.approx(0.6, abs=1e-12)
    want = (1 + 1 / math.log2(3) + 0.5 + 1 / math.log2(5) + 1 / 3 + 1 / math.log2(11)) / 10
    assert ndcg_at_k(records, 10) == pytest.approx(want, abs=1e-12)


def test_metric_errors():
    with pytest.raises(ValueError):
        hit_rate_at_k([], 10)
    with pytest.raises(ValueError):
        ndcg_at_k([rec(1)], 0)
    with pytest.raises(ValueError):
        hit_rate_at_k([rec(1)], float("inf"))
    with pytest.raises(ValueError):
        EvalRecord("u", ["a", "a"], "a")


@settings(max_examples=80, deadline=None)
@given(st.lists(st.one_of(st.none(), st.integers(1, 50)), min_size=1, max_size=20))
def test_metrics_monotone_in_k(ranks):
    records = [rec(r, f"u{i}", 60) for i, r in enumerate(ranks)]
    hr = [hit_rate_at_k(records, K) for K in range(1, 55)]
    nd = [ndcg_at_k(records, K) for K in range(1, 55)]
    assert hr == sorted(hr) and nd == sorted(nd)
    assert all(n <= h + 1e-12 for n, h in zip(nd, hr))


def test_report_format(tmp_path):
    records = [rec(1, "a"), rec(3, "b")]
    text = write_metrics_report(metrics_rows(records, [1, 10]), tmp_path / "m.tsv")
    assert text.splitlines() == [
        "HR\t1\t0.5000000000\t2",
        "NDCG\t1\t0.5000000000\t2",
        "HR\t10\t1.0000000000\t2",
        "NDCG\t10\t0.7500000000\t2",
    ]
    assert (tmp_path / "m.tsv").read_text() == text


# -- neighborhoods ----------------------------------------------------------------


def _E(X, ids=None):
    X = np.asarray(X, dtype=np.float32)
    return EmbeddingMatrix("t", tuple(ids or [f"i{i:02d}" for i in range(len(X))]), X)


def test_knn_collinear_tie_by_id():
    snap = knn_topn(_E([[1, 0], [2, 0], [3, 0]], ["b", "a", "c"]), 1)
    assert snap.neighbors == {"b": {"a"}, "a": {"b"}, "c": {"a"}}


def test_knn_duplicate_is_top1():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 4))
    X[7] = X[3]
    snap = knn_topn(_E(X), 1)
    assert snap.neighbors["i03"] == {"i07"}


def test_knn_matches_all_pairs_oracle():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((50, 6))
    snap = knn_topn(_E(X), 5, chunk=7)
    U = X / np.linalg.norm(X, axis=1, keepdims=True)
    S = U @ U.T
    for i in range(50):
        order = sorted((j for j in range(50) if j != i), key=lambda j: (-S[i, j], j))
        assert snap.neighbors[f"i{i:02d}"] == {f"i{j:02d}" for j in order[:5]}
        assert len(snap.neighbors[f"i{i:02d}"]) == 5


def test_knn_errors():
    with pytest.raises(ValueError):
        knn_topn(_E(np.eye(3)), 3)


def _snap(sets, n):
    return NeighborhoodSnapshot("e", n, {k: frozenset(v) for k, v in sets.items()})


def test_jaccard_37_of_50():
    a = {f"n{i}" for i in range(50)}
    b = {f"n{i}" for i in range(13, 63)}
    s = jaccard_stability(_snap({"x": a}, 50), _snap({"x": b}, 50))
    assert s.per_item["x"] == pytest.approx(37 / 63)
    assert abs(s.median - 0.587) < 1e-3
    assert round(s.median, 2) == 0.59


def test_jaccard_identical_and_disjoint():
    a = _snap({"x": {"a", "b"}, "y": {"c", "d"}}, 2)
    assert jaccard_stability(a, a).median == 1.0
    b = _snap({"x": {"e", "f"}, "y": {"g", "h"}}, 2)
    s = jaccard_stability(a, b)
    assert s.median == 0.0 and s.p10 == 0.0 and s.count == 2
    with pytest.raises(ValueError):
        jaccard_stability(a, _snap({"x": {"a", "b"}}, 2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_jaccard_symmetric(seed):
    rng = np.random.default_rng(seed)
    items = [f"i{i}" for i in range(8)]
    mk = lambda: _snap({i: set(rng.choice(30, 5, replace=False).tolist()) for i in items}, 5)  # noqa: E731
    a, b = mk(), mk()
    assert jaccard_stability(a, b).per_item == jaccard_stability(b, a).per_item
    assert jaccard_stability(a, a).median == 1.0


def test_jaccard_decile():
    vals = {f"i{k}": k for k in range(11)}  # k shared of 10
    a = _snap({i: {f"n{j}" for j in range(10)} for i in vals}, 10)
    b = _snap({i: {f"n{j}" for j in range(10 - k, 20 - k)} for i, k in vals.items()}, 10)
    s = jaccard_stability(a, b)
    per = sorted(k / (20 - k) for k in vals.values())
    assert s.median == pytest.approx(np.median(per))
    assert s.p10 == pytest.approx(np.percentile(per, 10))


# -- validity ---------------------------------------------------------------------


def test_valid_sid_rate_49_of_50():
    v = Vocabulary.build([("episode", 2, 4)], 257)
    reg = registry_from({"episode": [(1, 2)]})
    good = [v.sid_open, v.sid_token_id("episode", 1, 1), v.sid_token_id("episode", 2, 2), v.sid_close]
    bad = [v.sid_open, v.sid_token_id("episode", 1, 0), v.sid_token_id("episode", 2, 2), v.sid_close]
    assert valid_sid_rate([(good, reg)] * 49 + [(bad, reg)], v) == pytest.approx(0.98)
    assert valid_sid_rate([(good[:-1], reg)], v) == 0.0  # malformed counts as invalid
    with pytest.raises(ValueError):
        valid_sid_rate([], v)
