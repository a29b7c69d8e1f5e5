"""BM25 index: hand values, a direct-formula oracle, ordering and persistence."""

import math
from collections import Counter

import numpy as np
import pytest

from agents.corpus_index import (Bm25Params, bm25_score, build_index, load_index, read_corpus,
                                 save_index, search)
from agents.text import norms, tokenize, tokens_from_words
from backend.errors import ConfigurationError, DataError, IndexBuildError, IndexLoadError


def oracle_score(docs, query_terms, doc_id, k1=1.2, b=0.75):
    """Textbook BM25 over tokenised docs, straight from the formula."""
    toks = [norms(d) for d in docs]
    n = len(toks)
    avgdl = sum(len(t) for t in toks) / n
    dl = len(toks[doc_id])
    counts = Counter(toks[doc_id])
    total = 0.0
    for term in dict.fromkeys(query_terms):
        df = sum(1 for t in toks if term in t)
        tf = counts.get(term, 0)
        if df == 0 or tf == 0:
            continue
        idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
        total += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
    return total


class TestHandCase:

    def test_single_term(self):
        index = build_index(["a b a", "b c"])
        assert bm25_score(index, ["a"], 0) == pytest.approx(0.902346, abs=1e-4)
        assert bm25_score(index, ["a"], 0) == pytest.approx(oracle_score(["a b a", "b c"], ["a"], 0), abs=1e-12)

    def test_term_absent_from_doc(self):
        index = build_index(["a b a", "b c"])
        assert bm25_score(index, ["a"], 1) == 0.0

    def test_duplicate_query_terms_count_once(self):
        index = build_index(["a b a", "b c"])
        assert bm25_score(index, ["a", "a"], 0) == bm25_score(index, ["a"], 0)

    def test_unknown_doc_id(self):
        index = build_index(["a b a", "b c"])
        with pytest.raises(DataError):
            bm25_score(index, ["a"], 7)

    @pytest.mark.parametrize("k1, b", [(1.2, 0.75), (0.5, 0.0), (2.0, 1.0)])
    def test_strictly_increasing_in_tf(self, k1, b):
        # equal lengths, so only tf differs between docs 0..3
        index = build_index(["a x x x x", "a a x x x", "a a a x x", "a a a a x", "y"], Bm25Params(k1=k1, b=b))
        scores = [bm25_score(index, ["a"], d) for d in range(4)]
        assert all(lo < hi for lo, hi in zip(scores, scores[1:]))


class TestOracle:

    def test_random_corpora(self):
        rng = np.random.default_rng(7)
        vocab = [f"t{i}" for i in range(12)]
        for _ in range(50):
            n_docs = int(rng.integers(1, 51))
            docs = [" ".join(rng.choice(vocab, size=int(rng.integers(1, 9)))) for _ in range(n_docs)]
            k1, b = float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.0, 1.0))
            index = build_index(docs, Bm25Params(k1=k1, b=b))
            query = list(rng.choice(vocab, size=3))
            for doc_id in range(n_docs):
                expected = oracle_score(docs, query, doc_id, k1, b)
                assert abs(bm25_score(index, query, doc_id) - expected) < 1e-9
            for r in search(index, " ".join(query), n_docs):
                assert r.score == bm25_score(index, query, r.doc_id)


class TestSearch:

    def test_ordering_and_ties(self):
        index = build_index(["x y", "x y", "x", "z"])
        results = search(index, "x", 10)
        # docs 0 and 1 tie; tie broken by doc id
        assert [r.doc_id for r in results] == [2, 0, 1]
        assert [r.rank for r in results] == [1, 2, 3]
        assert all(results[i].score >= results[i + 1].score for i in range(len(results) - 1))

    def test_k_truncates(self):
        index = build_index(["x y", "x y", "x", "z"])
        assert len(search(index, "x", 2)) == 2

    def test_empty_and_oov_queries(self):
        index = build_index(["x y", "z"])
        assert search(index, "", 5) == []
        assert search(index, "unknown words", 5) == []

    def test_only_matching_docs_returned(self):
        index = build_index(["x y", "z"])
        assert [r.doc_id for r in search(index, "y", 5)] == [0]

    def test_bad_k(self):
        index = build_index(["x"])
        with pytest.raises(ConfigurationError):
            search(index, "x", 0)

    def test_smaller_k_is_prefix(self):
        rng = np.random.default_rng(11)
        vocab = [f"t{i}" for i in range(8)]
        for _ in range(30):
            docs = [" ".join(rng.choice(vocab, size=int(rng.integers(1, 8)))) for _ in range(int(rng.integers(1, 40)))]
            index = build_index(docs)
            query = " ".join(rng.choice(vocab, size=2))
            full = search(index, query, len(docs))
            for k in range(1, len(docs) + 1):
                assert search(index, query, k) == full[:k]


class TestBuild:

    def test_empty_documents_skipped(self):
        index = build_index(["a b", "", "  ", "c"])
        assert index.doc_count == 2
        assert index.skipped == 2
        assert index.document(1).text == "c"

    def test_all_empty_rejected(self):
        with pytest.raises(IndexBuildError):
            build_index(["", "   ", "!!"])

    @pytest.mark.parametrize("shards", [2, 3, 7])
    def test_shards_give_identical_index(self, shards):
        docs = [f"d{i % 5} common w{i}" for i in range(23)]
        single = build_index(docs)
        sharded = build_index(docs, shards=shards)
        assert sharded.fingerprint == single.fingerprint
        assert sharded.posting_list("common") == single.posting_list("common")

    def test_read_corpus(self, tmp_path):
        path = tmp_path / "corpus.txt"
        path.write_text("first line\nsecond line\n", encoding="utf-8")
        assert list(read_corpus(path)) == ["first line", "second line"]

    def test_bad_params(self):
        with pytest.raises(ValueError):
            Bm25Params(b=1.5)


class TestPersistence:

    def test_round_trip_scores_identically(self, tmp_path):
        docs = ["plants absorb carbon dioxide", "animals breathe oxygen", "plants need light and water"]
        index = build_index(docs)
        save_index(index, tmp_path / "idx")
        loaded = load_index(tmp_path / "idx")
        assert loaded.fingerprint == index.fingerprint
        assert loaded.doc_store == index.doc_store
        for query in ["plants", "oxygen water", "plants light"]:
            assert search(loaded, query, 3) == search(index, query, 3)

    def test_round_trip_bit_equal_on_random_queries(self, tmp_path):
        rng = np.random.default_rng(5)
        vocab = [f"w{i}" for i in range(30)]
        docs = [" ".join(rng.choice(vocab, size=int(rng.integers(1, 12)))) for _ in range(60)]
        index = build_index(docs, Bm25Params(k1=1.7, b=0.3))
        loaded = load_index(save_index(index, tmp_path / "idx"))
        for _ in range(100):
            query = list(rng.choice(vocab, size=int(rng.integers(1, 5))))
            fresh, reloaded = search(index, " ".join(query), 60), search(loaded, " ".join(query), 60)
            assert [(r.doc_id, r.score) for r in reloaded] == [(r.doc_id, r.score) for r in fresh]
            for doc_id in range(index.doc_count):
                assert bm25_score(loaded, query, doc_id) == bm25_score(index, query, doc_id)

    def test_build_is_deterministic(self):
        docs = ["a b", "b c", "c d a"]
        assert build_index(docs).fingerprint == build_index(docs).fingerprint

    def test_missing_index(self, tmp_path):
        with pytest.raises(IndexLoadError):
            load_index(tmp_path / "nope" / "index.bin")

    def test_corrupt_index(self, tmp_path):
        path = tmp_path / "index.bin"
        path.write_bytes(b"not an index at all")
        with pytest.raises(IndexLoadError):
            load_index(path)

    def test_truncated_index(self, tmp_path):
        target = save_index(build_index(["a b", "c"]), tmp_path / "idx")
        target.write_bytes(target.read_bytes()[:-3])
        with pytest.raises(IndexLoadError):
            load_index(target)


class TestTokenize:

    @pytest.mark.parametrize("text, expected", [
        ("Which gas do plants absorb?", ["which", "gas", "do", "plants", "absorb"]),
        ("", []),
        ("CO2-rich air.", ["co2", "rich", "air"]),
        ("snake_case  words", ["snake", "case", "words"]),
    ])
    def test_norms(self, text, expected):
        assert norms(text) == expected

    def test_byte_spans_index_source(self):
        text = "Eau: très chaude!"
        raw = text.encode("utf-8")
        for tok in tokenize(text):
            start, end = tok.byte_span
            assert raw[start:end].decode("utf-8") == tok.surface
            assert tok.norm == tok.surface.lower() and " " not in tok.norm

    @pytest.mark.parametrize("words", [["Which", "gas", "do", "plants", "absorb?"],
                                       ["CO2-rich", "air."], ["Eau:", "très", "chaude!"]])
    def test_pre_split_words_match_tokenize(self, words):
        joined = " ".join(words)
        tokens, _ = tokens_from_words(words)
        assert [t.norm for t in tokens] == norms(joined)
        assert [t.byte_span for t in tokens] == [t.byte_span for t in tokenize(joined)]

    def test_pre_split_origin(self):
        _, origin = tokens_from_words(["CO2-rich", "air."])
        assert origin == [0, 0, 1]

    def test_pre_split_word_without_letters(self):
        with pytest.raises(ValueError):
            tokens_from_words(["boils", "?"])

    def test_build_counts(self):
        index = build_index(["a b a", "b c"])
        assert index.doc_count == 2
        assert index.avg_doc_len == 2.5
        assert index.posting_list("a") == [(0, 2)]
        assert index.posting_list("b") == [(0, 1), (1, 1)]
