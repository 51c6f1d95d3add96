import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepbose.errors import (
    CorpusFormatError,
    DuplicateIdError,
    EmbeddingFormatError,
    EmptyDocumentError,
    LexiconFormatError,
    OOVDocumentError,
)
from deepbose.text import (
    Document,
    EmbeddingTable,
    embed_document,
    generate_synthetic_corpus,
    load_corpus,
    load_embeddings,
    load_lexicon,
    negative_emotions,
    stratified_split,
    tokenize,
    write_corpus,
    write_embeddings,
    write_lexicon,
)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


@pytest.mark.parametrize("raw, expected", [
    ("I feel SAD.", ["i", "feel", "sad"]),
    ("", []),
    ("DSM-IV!!", ["dsm", "iv"]),
    ("  a1 -- b2  ", ["a1", "b2"]),
])
def test_tokenize(raw, expected):
    assert tokenize(raw) == expected


@settings(max_examples=150, deadline=None)
@given(st.text())
def test_tokenize_idempotent(raw):
    once = tokenize(raw)
    assert tokenize(" ".join(once)) == once


class TestLoadEmbeddings:
    def test_direct_parse(self, tmp_path):
        t = load_embeddings(_write(tmp_path, "e.vec", "2 3\na 1 0 0\nb 0 1 0\n"))
        assert t.dim == 3 and len(t) == 2
        np.testing.assert_array_equal(t["a"], [1, 0, 0])
        np.testing.assert_array_equal(t["b"], [0, 1, 0])

    def test_arity_mismatch(self, tmp_path):
        with pytest.raises(EmbeddingFormatError, match="expected 3 values"):
            load_embeddings(_write(tmp_path, "e.vec", "1 3\na 1 0\n"))

    def test_zero_vector_skipped_with_one_warning(self, tmp_path):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            t = load_embeddings(_write(tmp_path, "e.vec", "1 2\na 0 0\n"))
        assert t.dim == 2 and len(t) == 0
        assert len(caught) == 1

    def test_duplicate_last_wins(self, tmp_path):
        with pytest.warns(UserWarning, match="duplicate"):
            t = load_embeddings(_write(tmp_path, "e.vec", "2 2\na 1 0\na 0 1\n"))
        np.testing.assert_array_equal(t["a"], [0, 1])

    @pytest.mark.parametrize("header", ["", "x y", "3", "2 0"])
    def test_malformed_header(self, tmp_path, header):
        with pytest.raises(EmbeddingFormatError, match="header"):
            load_embeddings(_write(tmp_path, "e.vec", header + "\na 1 0\n"))

    def test_vectors_are_read_only(self, tmp_path):
        t = load_embeddings(_write(tmp_path, "e.vec", "1 2\na 1 2\n"))
        with pytest.raises(ValueError):
            t["a"][0] = 5.0

    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        table = EmbeddingTable(4, {f"w{i}": rng.standard_normal(4) for i in range(5)})
        write_embeddings(table, tmp_path / "t.vec")
        back = load_embeddings(tmp_path / "t.vec")
        for tok in table.entries:
            np.testing.assert_array_equal(back[tok], table[tok])


class TestLoadLexicon:
    def test_flag_semantics(self, tmp_path):
        lex = load_lexicon(_write(tmp_path, "l.tsv", "abandon\tsadness\t1\nabandon\tjoy\t0\n"))
        assert lex.emotions == (("sadness", frozenset({"abandon"})),)

    def test_multi_emotion_membership(self, tmp_path):
        lex = load_lexicon(_write(tmp_path, "l.tsv", "x\tanger\t1\nx\tfear\t1\n"))
        assert lex.names == ["anger", "fear"]
        assert all(words == {"x"} for _, words in lex)

    def test_bad_line_names_line_number(self, tmp_path):
        with pytest.raises(LexiconFormatError, match=":2:"):
            load_lexicon(_write(tmp_path, "l.tsv", "a\tjoy\t1\nbad line\n"))

    def test_no_emotions(self, tmp_path):
        with pytest.raises(LexiconFormatError):
            load_lexicon(_write(tmp_path, "l.tsv", "a\tjoy\t0\n"))

    def test_order_by_first_appearance_and_roundtrip(self, tmp_path):
        lex = load_lexicon(_write(tmp_path, "l.tsv", "b\tfear\t1\na\tjoy\t1\nc\tfear\t1\n"))
        assert lex.names == ["fear", "joy"]
        write_lexicon(lex, tmp_path / "out.tsv")
        assert load_lexicon(tmp_path / "out.tsv") == lex


class TestLoadCorpus:
    def test_direct(self, tmp_path):
        c = load_corpus(_write(tmp_path, "c.jsonl",
                               '{"id":"u1","label":1,"posts":["I feel sad"]}\n'))
        assert c.documents == (Document("u1", 1, ("i", "feel", "sad")),)

    def test_posts_concatenated_in_order(self, tmp_path):
        c = load_corpus(_write(tmp_path, "c.jsonl",
                               '{"id":"u1","label":null,"posts":["one two","three"]}\n'))
        assert c.get("u1").tokens == ("one", "two", "three")
        assert c.get("u1").label is None

    def test_empty_document_dropped_with_warning(self, tmp_path):
        text = ('{"id":"u2","label":0,"posts":["...","!!"]}\n'
                '{"id":"u3","label":0,"posts":["ok"]}\n')
        with pytest.warns(UserWarning, match="u2"):
            c = load_corpus(_write(tmp_path, "c.jsonl", text))
        assert [d.id for d in c] == ["u3"]

    def test_duplicate_id(self, tmp_path):
        line = '{"id":"u1","label":1,"posts":["a"]}\n'
        with pytest.raises(DuplicateIdError):
            load_corpus(_write(tmp_path, "c.jsonl", line * 2))

    @pytest.mark.parametrize("line", [
        "{not json", '{"label":1,"posts":["a"]}', '{"id":"u","label":2,"posts":["a"]}',
        '{"id":"u","label":1,"posts":"a"}',
    ])
    def test_malformed(self, tmp_path, line):
        with pytest.raises(CorpusFormatError):
            load_corpus(_write(tmp_path, "c.jsonl", line + "\n"))

    def test_document_rejects_empty_tokens(self):
        with pytest.raises(EmptyDocumentError):
            Document("x", 0, ())


class TestEmbedDocument:
    table = EmbeddingTable(2, {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])})

    def test_lookup_with_repetition(self):
        e = embed_document(Document("d", 0, ("a", "b", "a")), self.table)
        np.testing.assert_array_equal(e.matrix, [[1, 0], [0, 1], [1, 0]])
        assert e.oov_count == 0

    def test_all_oov(self):
        with pytest.raises(OOVDocumentError):
            embed_document(Document("d", 0, ("zzz",)), self.table)

    def test_skip_rule(self):
        e = embed_document(Document("d", 0, ("a", "zzz", "b")), self.table)
        np.testing.assert_array_equal(e.matrix, [[1, 0], [0, 1]])
        assert e.oov_count == 1 and e.kept_tokens == ("a", "b")

    def test_prefix_truncation(self):
        e = embed_document(Document("d", 0, ("b", "zzz", "a", "a")), self.table, max_tokens=2)
        assert e.kept_tokens == ("b", "a")

    @settings(max_examples=120, deadline=None)
    @given(st.lists(st.sampled_from(["a", "b", "x", "y"]), min_size=1, max_size=30))
    def test_rows_plus_oov_equal_token_count(self, tokens):
        doc = Document("d", None, tuple(tokens))
        if not any(t in self.table for t in tokens):
            with pytest.raises(OOVDocumentError):
                embed_document(doc, self.table)
            return
        e = embed_document(doc, self.table)
        assert e.matrix.shape[0] + e.oov_count == len(tokens)
        for row, tok in zip(e.matrix, e.kept_tokens):
            np.testing.assert_array_equal(row, self.table[tok])


class TestSynthetic:
    args = dict(n_docs=30, doc_len=20, n_emotions=4, words_per_emotion=6, dim=8,
                class_skew=0.8, seed=5)

    def test_deterministic_bytes(self, tmp_path):
        for run in ("a", "b"):
            corpus, table, lex = generate_synthetic_corpus(**self.args)
            d = tmp_path / run
            d.mkdir()
            write_corpus(corpus, d / "c.jsonl")
            write_embeddings(table, d / "e.vec")
            write_lexicon(lex, d / "l.tsv")
        for name in ("c.jsonl", "e.vec", "l.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_anchor_separation_and_balance(self):
        corpus, table, lex = generate_synthetic_corpus(**self.args)
        labels = corpus.labels
        assert abs(int(labels.sum()) - len(labels) // 2) <= 1
        assert len(lex) == 4

    def test_single_emotion(self):
        corpus, _, lex = generate_synthetic_corpus(**{**self.args, "n_emotions": 1})
        assert len(lex) == 1
        assert int(corpus.labels.sum()) == 15

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 5))
    def test_every_lexicon_word_is_embedded(self, seed, n_emotions):
        _, table, lex = generate_synthetic_corpus(8, 5, n_emotions, 3, 6, 0.5, seed)
        for _, words in lex:
            assert all(w in table for w in words)

    def test_unplaceable_anchors(self):
        from deepbose.errors import ConfigError

        with pytest.raises(ConfigError, match="anchors"):
            generate_synthetic_corpus(10, 5, 8, 2, 1, 0.5, 0)

    def test_negative_emotions(self):
        assert negative_emotions(6) == ["sadness", "anger", "fear"]
        assert negative_emotions(1) == ["sadness"]

    def test_written_corpus_loads_back(self, tmp_path):
        corpus, _, _ = generate_synthetic_corpus(**self.args)
        write_corpus(corpus, tmp_path / "c.jsonl")
        assert load_corpus(tmp_path / "c.jsonl") == corpus
        line = json.loads((tmp_path / "c.jsonl").read_text().splitlines()[0])
        assert set(line) == {"id", "label", "posts"}


def test_stratified_split_preserves_class_ratio():
    corpus, _, _ = generate_synthetic_corpus(50, 5, 2, 3, 4, 0.5, 1)
    train, val = stratified_split(corpus, 0.2, seed=0)
    assert len(train) + len(val) == 50
    assert int(val.labels.sum()) == 5 and len(val) == 10
    assert stratified_split(corpus, 0.2, seed=0) == (train, val)
