import math
import random
import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import VOCAB, oracle_ranking, oracle_tokens, oracle_scores, random_corpus_docs

from forage.corpus import (
    CorpusError,
    Document,
    bm25_score,
    build_index,
    coverage,
    load_corpus,
    retrieve,
    save_corpus,
)

class TestBuildIndex:
    def test_empty(self):
        assert build_index([]).N == 0

    def test_single_doc_statistics(self):
        corpus = build_index([Document("d", "", "A b, A")])
        assert corpus.index == {"a": (("d", 2),), "b": (("d", 1),)}
        assert corpus.doc_lengths == {"d": 3}

    def test_generated_corpus_lengths(self):
        docs = random_corpus_docs(3)
        corpus = build_index(docs)
        assert corpus.N == 200
        lengths = [len(oracle_tokens(f"{d.title}\n{d.body}")) for d in docs]
        assert corpus.avg_doc_length == pytest.approx(sum(lengths) / 200, abs=1e-12)

    def test_duplicate_id(self):
        with pytest.raises(CorpusError, match="dup"):
            build_index([Document("x", "", "a"), Document("x", "", "b")])

    def test_order_independent(self):
        docs = random_corpus_docs(5, 50)
        a, b = build_index(docs), build_index(list(reversed(docs)))
        assert a.index == b.index and a.doc_lengths == b.doc_lengths
        assert a.avg_doc_length == b.avg_doc_length

    def test_tokenization_drops_empty_and_lowercases(self):
        corpus = build_index([Document("d", "", "--Foo__bar  BAZ9!!")])
        assert set(corpus.index) == {"foo", "bar", "baz9"}


class TestBM25:
    def test_no_overlap_is_zero(self):
        corpus = build_index([Document("d", "", "alpha beta")])
        assert bm25_score(corpus, "gamma", "d") == 0.0

    def test_single_doc_single_term(self):
        corpus = build_index([Document("d", "", "apple")])
        # N = 1, n_t = 1 → idf = ln(0.5 / 1.5 + 1); tf = 1, dl = avgdl → saturation 1
        assert bm25_score(corpus, "apple", "d") == pytest.approx(math.log(4 / 3), abs=1e-15)

    def test_matches_brute_force(self):
        docs = random_corpus_docs(11)
        corpus = build_index(docs)
        rng = random.Random(0)
        for _ in range(20):
            query = " ".join(rng.sample(VOCAB, rng.randint(1, 4)))
            expected = oracle_scores(docs, query)
            for doc_id in rng.sample(sorted(expected), 10):
                assert bm25_score(corpus, query, doc_id) == pytest.approx(expected[doc_id], rel=1e-12, abs=1e-15)

    def test_unknown_doc(self):
        with pytest.raises(KeyError):
            bm25_score(build_index([Document("d", "", "x")]), "x", "nope")

    def test_repeated_query_terms_count_once(self):
        corpus = build_index([Document("d", "", "apple pie"), Document("e", "", "pie")])
        assert bm25_score(corpus, "apple apple", "d") == bm25_score(corpus, "apple", "d")


class TestRetrieve:
    def test_default_k_is_three(self):
        corpus = build_index(random_corpus_docs(1))
        assert retrieve(corpus, "w0 w1 w2").k == 3

    def test_single_match_first(self):
        corpus = build_index([Document("a", "", "x y"), Document("b", "", "z"), Document("c", "", "y")])
        assert retrieve(corpus, "z").doc_ids == ["b"]

    def test_empty_query(self):
        corpus = build_index([Document("a", "", "x")])
        assert retrieve(corpus, " ,;").ranked == ()

    def test_k_larger_than_corpus(self):
        corpus = build_index([Document("a", "", "x"), Document("b", "", "x y")])
        assert retrieve(corpus, "x", k=10).doc_ids == retrieve(corpus, "x", k=2).doc_ids

    def test_ties_by_doc_id(self):
        corpus = build_index([Document(i, "", "same text") for i in ("c", "a", "b")])
        assert retrieve(corpus, "same").doc_ids == ["a", "b", "c"]

    def test_k_must_be_positive(self):
        with pytest.raises(CorpusError):
            retrieve(build_index([Document("a", "", "x")]), "x", 0)

    def test_ranking_matches_full_sort(self):
        docs = random_corpus_docs(42)
        corpus = build_index(docs)
        rng = random.Random(42)
        for _ in range(30):
            query = " ".join(rng.choice(VOCAB + ["zzz"]) for _ in range(rng.randint(1, 5)))
            for k in (1, 3, 7):
                result = retrieve(corpus, query, k)
                assert result.doc_ids == oracle_ranking(docs, query, k)
                scores = [s for _, s in result.ranked]
                assert scores == sorted(scores, reverse=True)


class TestCoverage:
    def test_partial(self):
        assert coverage({"d1", "d2"}, {"d1", "d2", "d3"}) == pytest.approx(2 / 3)

    def test_empty_retrieval(self):
        assert coverage(set(), {"d1"}) == 0

    def test_superset(self):
        assert coverage({"d1", "d2", "x", "y"}, {"d1", "d2"}) == 1

    def test_empty_golden(self):
        with pytest.raises(CorpusError):
            coverage({"a"}, set())

    @given(
        st.sets(st.integers(0, 20)),
        st.sets(st.integers(0, 20)),
        st.sets(st.integers(0, 20), min_size=1),
    )
    def test_monotone_under_union(self, a, b, golden):
        c = coverage(a, golden)
        assert 0 <= c <= 1
        assert coverage(a | b, golden) >= c


def test_corpus_file_round_trip(tmp_path):
    docs = random_corpus_docs(9, 20)
    path = tmp_path / "corpus.jsonl"
    save_corpus(docs, path)
    corpus = load_corpus(path)
    assert sorted(corpus.documents.values(), key=lambda d: d.doc_id) == sorted(docs, key=lambda d: d.doc_id)
