"""Text ingestion: embeddings, emotion lexicons, labeled corpora.

File formats
------------
* embeddings: fastText ``.vec`` text layout, a ``"<count> <dim>"`` header
  followed by ``token v1 ... v_dim`` lines.
* lexicon: EmoLex association lines ``word<TAB>emotion<TAB>flag``.
* corpus: JSON lines ``{"id": ..., "label": 0|1|null, "posts": [...]}``,
  one user per line.
"""
from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    CorpusFormatError,
    DataError,
    DuplicateIdError,
    EmbeddingFormatError,
    EmptyDocumentError,
    LexiconFormatError,
    OOVDocumentError,
)

DEFAULT_MAX_TOKENS = 20000

_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(raw_text: str) -> list[str]:
    """Lowercase and split on every run of non-alphanumeric characters."""
    return [tok for tok in _SPLIT.split(raw_text.lower()) if tok]


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    entries: Mapping[str, np.ndarray]

    def __post_init__(self):
        if self.dim < 1:
            raise EmbeddingFormatError(f"embedding dim must be positive, got {self.dim}")
        for token, vec in self.entries.items():
            if vec.shape != (self.dim,):
                raise EmbeddingFormatError(
                    f"vector for {token!r} has shape {vec.shape}, expected ({self.dim},)"
                )
            if not np.any(vec):
                raise EmbeddingFormatError(f"vector for {token!r} is all zeros")
            vec.setflags(write=False)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, token) -> bool:
        return token in self.entries

    def __getitem__(self, token: str) -> np.ndarray:
        return self.entries[token]

    def matrix(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.empty((0, self.dim))
        return np.stack([self.entries[t] for t in tokens])


@dataclass(frozen=True)
class Lexicon:
    """Ordered emotions, each with a non-empty word set."""

    emotions: tuple[tuple[str, frozenset], ...]

    def __post_init__(self):
        names = [name for name, _ in self.emotions]
        if len(set(names)) != len(names):
            raise LexiconFormatError(f"duplicate emotion names in {names}")
        for name, words in self.emotions:
            if not words:
                raise LexiconFormatError(f"emotion {name!r} has no words")

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.emotions]

    def __len__(self) -> int:
        return len(self.emotions)

    def __iter__(self) -> Iterator[tuple[str, frozenset]]:
        return iter(self.emotions)


@dataclass(frozen=True)
class Document:
    id: str
    label: int | None
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens:
            raise EmptyDocumentError(f"document {self.id!r} has no tokens")
        if self.label not in (0, 1, None):
            raise CorpusFormatError(f"document {self.id!r}: label must be 0, 1 or null")


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]

    def __post_init__(self):
        seen = set()
        for doc in self.documents:
            if doc.id in seen:
                raise DuplicateIdError(f"duplicate document id {doc.id!r}")
            seen.add(doc.id)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    @property
    def labels(self) -> np.ndarray:
        return np.array([d.label for d in self.documents])

    def get(self, doc_id: str) -> Document:
        for doc in self.documents:
            if doc.id == doc_id:
                return doc
        raise KeyError(doc_id)


@dataclass(frozen=True)
class EmbeddedDoc:
    """Embedding rows of the in-vocabulary tokens of one document."""

    matrix: np.ndarray
    kept_tokens: tuple[str, ...]
    oov_count: int = 0
    id: str | None = None
    label: int | None = None

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.kept_tokens):
            raise DataError("embedded matrix rows must align with kept tokens")


# -- loaders ---------------------------------------------------------------


def load_embeddings(path) -> EmbeddingTable:
    entries: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        try:
            if len(header) != 2:
                raise ValueError
            count, dim = int(header[0]), int(header[1])
            if count < 0 or dim < 1:
                raise ValueError
        except ValueError:
            raise EmbeddingFormatError(f"{path}: malformed header {header!r}") from None
        n_rows = 0
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            n_rows += 1
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}"
                )
            token = parts[0]
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric value") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingFormatError(f"{path}:{lineno}: non-finite value")
            if not np.any(vec):
                warnings.warn(f"{path}:{lineno}: zero vector for {token!r} skipped")
                continue
            if token in entries:
                warnings.warn(f"{path}:{lineno}: duplicate token {token!r}, last one wins")
            entries[token] = vec
    if n_rows != count:
        warnings.warn(f"{path}: header announces {count} rows, found {n_rows}")
    return EmbeddingTable(dim=dim, entries=entries)


def load_lexicon(path) -> Lexicon:
    words: dict[str, set] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[2].strip() not in ("0", "1") or not parts[0] or not parts[1]:
                raise LexiconFormatError(f"{path}:{lineno}: malformed line {line.rstrip()!r}")
            word, emotion, flag = parts[0].strip(), parts[1].strip(), parts[2].strip()
            if flag == "1":
                words.setdefault(emotion, set()).add(word)
    if not words:
        raise LexiconFormatError(f"{path}: lexicon has no emotion with associated words")
    return Lexicon(tuple((name, frozenset(ws)) for name, ws in words.items()))


def load_corpus(path) -> Corpus:
    docs = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc_id, label, posts = obj["id"], obj.get("label"), obj["posts"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
            if not isinstance(doc_id, str) or not isinstance(posts, list):
                raise CorpusFormatError(f"{path}:{lineno}: bad field types")
            if label not in (0, 1, None) or isinstance(label, bool):
                raise CorpusFormatError(f"{path}:{lineno}: label must be 0, 1 or null")
            if doc_id in seen:
                raise DuplicateIdError(f"{path}:{lineno}: duplicate id {doc_id!r}")
            seen.add(doc_id)
            tokens = tokenize(" ".join(str(p) for p in posts))
            if not tokens:
                warnings.warn(f"{path}:{lineno}: document {doc_id!r} has no tokens, dropped")
                continue
            docs.append(Document(doc_id, label, tuple(tokens)))
    return Corpus(tuple(docs))


def embed_document(doc: Document, table: EmbeddingTable,
                   max_tokens: int | None = DEFAULT_MAX_TOKENS) -> EmbeddedDoc:
    """Look up every token; out-of-vocabulary tokens are skipped.

    The kept sequence is truncated to its first ``max_tokens`` entries.
    """
    if len(table) == 0:
        raise DataError("embedding table is empty")
    kept = [t for t in doc.tokens if t in table]
    oov = len(doc.tokens) - len(kept)
    if not kept:
        raise OOVDocumentError(f"document {doc.id!r} is empty after dropping OOV tokens")
    if max_tokens is not None:
        kept = kept[:max_tokens]
    return EmbeddedDoc(table.matrix(kept), tuple(kept), oov, doc.id, doc.label)


def embed_corpus(corpus: Corpus, table: EmbeddingTable,
                 max_tokens: int | None = DEFAULT_MAX_TOKENS) -> list[EmbeddedDoc]:
    return [embed_document(doc, table, max_tokens) for doc in corpus]


def stratified_split(corpus: Corpus, fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Carve a stratified held-out fraction; both parts keep corpus order."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    labels = corpus.labels
    held = set()
    for value in (0, 1):
        idx = np.flatnonzero(labels == value)
        n_held = int(round(fraction * len(idx)))
        held.update(rng.permutation(idx)[:n_held].tolist())
    docs = corpus.documents
    rest = tuple(d for i, d in enumerate(docs) if i not in held)
    out = tuple(d for i, d in enumerate(docs) if i in held)
    return Corpus(rest), Corpus(out)


# -- writers ---------------------------------------------------------------


def write_embeddings(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for token, vec in table.entries.items():
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def write_lexicon(lexicon: Lexicon, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, words in lexicon:
            for word in sorted(words):
                fh.write(f"{word}\t{name}\t1\n")


def write_corpus(corpus: Corpus, path, post_len: int = 20) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            toks = doc.tokens
            posts = [" ".join(toks[i:i + post_len]) for i in range(0, len(toks), post_len)]
            fh.write(json.dumps({"id": doc.id, "label": doc.label, "posts": posts}) + "\n")


# -- synthetic fixtures ----------------------------------------------------

EMOTION_NAMES = ("sadness", "anger", "fear", "joy", "trust", "surprise", "disgust", "anticipation")


def negative_emotions(n_emotions: int) -> list[str]:
    """Names of the emotions that positive synthetic documents lean toward."""
    return list(_emotion_names(n_emotions)[: max(1, n_emotions // 2)])


def _emotion_names(n: int) -> list[str]:
    names = list(EMOTION_NAMES[:n])
    names += [f"emotion{i}" for i in range(len(names), n)]
    return names


def _separated_anchors(rng, n, dim, min_dissimilarity=0.5, retries=1000):
    anchors = []
    for _ in range(n):
        for _ in range(retries):
            cand = rng.standard_normal(dim)
            cand /= np.linalg.norm(cand)
            if all(1.0 - cand @ a >= min_dissimilarity for a in anchors):
                anchors.append(cand)
                break
        else:
            raise ConfigError(
                f"could not place {n} anchors with dissimilarity >= {min_dissimilarity} "
                f"in {dim} dimensions"
            )
    return np.array(anchors)


def generate_synthetic_corpus(n_docs: int, doc_len: int, n_emotions: int,
                              words_per_emotion: int, dim: int, class_skew: float,
                              seed: int, noise: float = 0.25):
    """Build a labeled corpus whose classes differ in emotional vocabulary.

    Each emotion owns ``words_per_emotion`` words scattered around a unit
    anchor. Positive documents draw a token from the negative emotions with
    probability ``(1 + class_skew) / 2``; negative documents with
    ``(1 - class_skew) / 2``.

    Returns
    -------
    (Corpus, EmbeddingTable, Lexicon)
    """
    for name, value in (("n_docs", n_docs), ("doc_len", doc_len), ("n_emotions", n_emotions),
                        ("words_per_emotion", words_per_emotion), ("dim", dim)):
        if value < 1:
            raise ConfigError(f"{name} must be positive, got {value}")
    if not 0.0 < class_skew <= 1.0:
        raise ConfigError(f"class_skew must be in (0, 1], got {class_skew}")
    rng = np.random.default_rng(seed)
    names = _emotion_names(n_emotions)
    anchors = _separated_anchors(rng, n_emotions, dim)

    entries = {}
    emotions = []
    for name, anchor in zip(names, anchors):
        words = []
        for i in range(words_per_emotion):
            vec = anchor + noise * rng.standard_normal(dim) / math.sqrt(dim)
            word = f"{name}{i:03d}"
            entries[word] = vec / np.linalg.norm(vec)
            words.append(word)
        emotions.append((name, words))
    negative = set(negative_emotions(n_emotions))
    neg_words = [w for name, ws in emotions if name in negative for w in ws]
    pos_words = [w for name, ws in emotions if name not in negative for w in ws] or neg_words

    n_pos = n_docs - n_docs // 2
    labels = rng.permutation(np.array([1] * n_pos + [0] * (n_docs // 2)))
    docs = []
    for i, label in enumerate(labels):
        p_neg = (1.0 + class_skew) / 2 if label == 1 else (1.0 - class_skew) / 2
        from_neg = rng.random(doc_len) < p_neg
        neg_pick = rng.integers(len(neg_words), size=doc_len)
        pos_pick = rng.integers(len(pos_words), size=doc_len)
        tokens = tuple(neg_words[a] if f else pos_words[b]
                       for f, a, b in zip(from_neg, neg_pick, pos_pick))
        docs.append(Document(f"user{i:05d}", int(label), tokens))

    lexicon = Lexicon(tuple((name, frozenset(ws)) for name, ws in emotions))
    return Corpus(tuple(docs)), EmbeddingTable(dim, entries), lexicon
