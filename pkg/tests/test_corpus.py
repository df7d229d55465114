"""Corpus ingestion: tokenization, vocabulary filters, BoW and embeddings."""
import json
from collections import Counter

import numpy as np
import pytest

from topicloop.corpus import (Vocabulary, build_vocabulary,
                              default_stopwords, load_bow, load_corpus,
                              load_embeddings, load_stopwords, make_corpus,
                              save_bow, to_bow, tokenize)
from topicloop.errors import EmptyDocument, EmptyVocabulary, FormatError


class TestTokenize:
    def test_punctuation_and_stopwords(self):
        assert tokenize("The CPU, the RAM!", {"the"}) == ["cpu", "ram"]

    def test_empty_input(self):
        assert tokenize("", {"the"}) == []

    def test_short_tokens_removed(self):
        assert tokenize("a I x", {"a", "i"}) == []

    def test_splits_on_non_alphabetic(self):
        assert tokenize("foo-bar2baz", set()) == ["foo", "bar", "baz"]

    def test_default_stopword_resource(self):
        sw = default_stopwords()
        assert "the" in sw and "and" in sw
        assert tokenize("the quick brown fox", sw) == ["quick", "brown", "fox"]


class TestBuildVocabulary:
    def make_docs(self, word, n_present, n_total, filler="zz"):
        docs = [[word, filler] for _ in range(n_present)]
        docs += [[filler] for _ in range(n_total - n_present)]
        return docs

    def test_df_above_min_retained(self):
        docs = self.make_docs("cpu", 6, 100)
        vocab = build_vocabulary(docs, min_df=5, max_df_ratio=0.8,
                                 embed_vocab={"cpu", "zz"})
        assert "cpu" in vocab

    def test_df_ratio_one_dropped(self):
        docs = [["cpu", "zz"] for _ in range(100)]
        docs += [["zz"] for _ in range(50)]
        vocab = build_vocabulary(docs, min_df=5, max_df_ratio=0.8,
                                 embed_vocab={"cpu", "zz"})
        assert "zz" not in vocab  # df ratio 1.0 >= 0.8
        assert "cpu" in vocab     # 100/150 < 0.8

    def test_missing_embedding_dropped(self):
        docs = [["cpu", "keepme"] for _ in range(10)]
        docs += [["filler"] for _ in range(90)]
        vocab = build_vocabulary(docs, min_df=5, max_df_ratio=0.8,
                                 embed_vocab={"keepme"})
        assert "cpu" not in vocab
        assert "keepme" in vocab

    def test_empty_vocabulary_raises(self):
        with pytest.raises(EmptyVocabulary):
            build_vocabulary([["aa"], ["bb"]], min_df=5, max_df_ratio=0.8,
                             embed_vocab={"aa", "bb"})

    def test_lexicographic_order_and_bijection(self):
        docs = [["pear", "apple", "mango"] for _ in range(6)]
        docs += [["other"] for _ in range(4)]
        vocab = build_vocabulary(docs, min_df=1, max_df_ratio=1.0,
                                 embed_vocab={"pear", "apple", "mango"})
        assert list(vocab.words) == ["apple", "mango", "pear"]
        for i, w in enumerate(vocab.words):
            assert vocab.index[w] == i

    def test_determinism(self):
        rng = np.random.default_rng(0)
        pool = [f"word{i}" for i in range(30)]
        docs = [[pool[j] for j in rng.integers(0, 30, size=8)] for _ in range(50)]
        v1 = build_vocabulary(docs, min_df=2, max_df_ratio=0.9, embed_vocab=set(pool))
        v2 = build_vocabulary(docs, min_df=2, max_df_ratio=0.9, embed_vocab=set(pool))
        assert v1.words == v2.words

    def test_df_filter_recount(self):
        rng = np.random.default_rng(1)
        pool = [f"word{i}" for i in range(20)]
        docs = [[pool[j] for j in rng.integers(0, 20, size=6)] for _ in range(40)]
        min_df, ratio = 3, 0.5
        vocab = build_vocabulary(docs, min_df=min_df, max_df_ratio=ratio,
                                 embed_vocab=set(pool))
        df = Counter()
        for d in docs:
            df.update(set(d))
        for w in vocab.words:
            assert min_df <= df[w] < ratio * len(docs)
        for w in pool:
            if min_df <= df[w] < ratio * len(docs):
                assert w in vocab


class TestToBow:
    def test_direct_count(self):
        vocab = Vocabulary.from_words(["cpu", "ram"])
        bow = to_bow(["cpu", "cpu", "ram"], vocab)
        assert bow.counts == {0: 2, 1: 1}

    def test_all_oov_raises(self):
        vocab = Vocabulary.from_words(["cpu"])
        with pytest.raises(EmptyDocument):
            to_bow(["xyz"], vocab)

    def test_oov_silently_dropped(self):
        vocab = Vocabulary.from_words(["cpu", "ram"])
        assert to_bow(["ram", "xyz"], vocab).counts == {1: 1}

    def test_indices_below_vocab_size(self):
        rng = np.random.default_rng(2)
        vocab = Vocabulary.from_words(sorted(f"w{i}" for i in range(10)))
        tokens = [f"w{i}" for i in rng.integers(0, 15, size=30)]
        try:
            bow = to_bow(tokens, vocab)
        except EmptyDocument:
            return
        assert all(0 <= i < vocab.size for i in bow.counts)


class TestLoadEmbeddings:
    def test_two_lines(self, tmp_path):
        p = tmp_path / "emb.txt"
        p.write_text("a 1.0 0.0\nb 0.0 1.0\n")
        table = load_embeddings(p)
        assert table.dim == 2 and len(table) == 2
        assert np.allclose(table["a"], [1.0, 0.0])

    def test_dim_mismatch(self, tmp_path):
        p = tmp_path / "emb.txt"
        p.write_text("a 1.0 0.0\nb 0.0 1.0 2.0\n")
        with pytest.raises(FormatError) as exc:
            load_embeddings(p)
        assert exc.value.line_number == 2

    def test_bad_float(self, tmp_path):
        p = tmp_path / "emb.txt"
        p.write_text("a 1.0 0.0\nb 0.0 oops\n")
        with pytest.raises(FormatError) as exc:
            load_embeddings(p)
        assert exc.value.line_number == 2

    def test_restrict_to(self, tmp_path):
        p = tmp_path / "emb.txt"
        p.write_text("a 1.0 0.0\nb 0.0 1.0\n")
        table = load_embeddings(p, restrict_to={"a"})
        assert "a" in table and "b" not in table

    def test_embedding_closure(self, tmp_path):
        p = tmp_path / "emb.txt"
        p.write_text("apple 1 2\nmango 3 4\npear 5 6\n")
        table = load_embeddings(p)
        docs = [["apple", "mango", "pear", "unknown"] for _ in range(3)]
        docs += [["unrelated"] for _ in range(2)]
        vocab = build_vocabulary(docs, min_df=1, max_df_ratio=1.0,
                                 embed_vocab=set(table.words()))
        assert vocab.size == 3
        for w in vocab.words:
            assert table[w] is not None


class TestLoadCorpus:
    def test_labeled_record(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"text":"hi there","label":"A"}\n')
        assert load_corpus(p) == [("hi there", "A")]

    def test_optional_label(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"text":"hi"}\n')
        assert load_corpus(p) == [("hi", None)]

    def test_missing_text(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"label":"A"}\n')
        with pytest.raises(FormatError) as exc:
            load_corpus(p)
        assert exc.value.line_number == 1

    def test_order_preserved(self, tmp_path):
        p = tmp_path / "c.jsonl"
        lines = [json.dumps({"text": f"doc {i}"}) for i in range(20)]
        p.write_text("\n".join(lines) + "\n")
        assert [t for t, _ in load_corpus(p)] == [f"doc {i}" for i in range(20)]


class TestRoundTrips:
    def test_vocabulary_save_load(self, tmp_path):
        vocab = Vocabulary.from_words(["alpha", "beta", "gamma"])
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        assert path.read_text() == "alpha\nbeta\ngamma\n"
        assert Vocabulary.load(path).words == vocab.words

    def test_bow_save_load(self, tmp_path):
        vocab = Vocabulary.from_words(["alpha", "beta"])
        corpus = make_corpus([("alpha beta alpha", "X"), ("beta", None)],
                             vocab, set(), "train")
        path = tmp_path / "bow.jsonl"
        save_bow(corpus, path)
        loaded = load_bow(path, vocab)
        assert [d.counts for d in loaded.docs] == [d.counts for d in corpus.docs]
        assert [d.label for d in loaded.docs] == ["X", None]

    def test_make_corpus_drops_empty(self, caplog):
        vocab = Vocabulary.from_words(["alpha"])
        with caplog.at_level("WARNING"):
            corpus = make_corpus([("alpha", None), ("zzz", None)], vocab, set())
        assert len(corpus.docs) == 1
        assert any("dropped" in r.message for r in caplog.records)

    def test_stopword_file_override(self, tmp_path):
        p = tmp_path / "sw.txt"
        p.write_text("alpha\nbeta\n")
        assert load_stopwords(p) == frozenset({"alpha", "beta"})

    def test_vocab_hash_tracks_content(self):
        v1 = Vocabulary.from_words(["a1", "b1"])
        v2 = Vocabulary.from_words(["a1", "b2"])
        assert v1.sha256() != v2.sha256()
        assert v1.sha256() == Vocabulary.from_words(["a1", "b1"]).sha256()
