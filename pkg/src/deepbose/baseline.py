"""Offline BoSE: hard sub-emotion labels, n-gram counts, sublinear TF-IDF
and a logistic-regression baseline. The IDF computed here also seeds the
trainable IDF-attention weights of the deep model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import Codebook, pairwise_dissimilarity
from .errors import DataError, ModelMismatchError


def hard_assign(doc, codebook: Codebook) -> np.ndarray:
    """Index of the least-dissimilar codevector for each row (lowest index on ties)."""
    X = doc.matrix if hasattr(doc, "matrix") else np.asarray(doc, dtype=np.float64)
    if X.shape[0] == 0:
        raise DataError("cannot assign an empty document")
    return np.argmin(pairwise_dissimilarity(X, codebook.theta), axis=1)


@dataclass(frozen=True)
class SparseCounts:
    n: int
    size: int
    counts: dict

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def dense(self) -> np.ndarray:
        out = np.zeros(self.size)
        for f, c in self.counts.items():
            out[f] = c
        return out


def ngram_counts(seq, n: int, K: int) -> SparseCounts:
    """Unigram counts per label, or bigram counts keyed ``first * K + second``."""
    seq = [int(s) for s in seq]
    if n not in (1, 2):
        raise ValueError(f"only unigrams and bigrams are supported, got n={n}")
    if len(seq) < n:
        raise DataError(f"sequence of length {len(seq)} has no {n}-grams")
    if any(not 0 <= s < K for s in seq):
        raise ValueError(f"labels must lie in [0, {K})")
    counts: dict = {}
    if n == 1:
        keys = seq
    else:
        keys = [a * K + b for a, b in zip(seq[:-1], seq[1:])]
    for k in keys:
        counts[k] = counts.get(k, 0) + 1
    return SparseCounts(n, K ** n, dict(sorted(counts.items())))


@dataclass(frozen=True)
class IdfVector:
    values: np.ndarray
    n_docs: int


def compute_idf(corpus_counts, F: int) -> IdfVector:
    """Smoothed IDF ``ln((1 + N) / (1 + df)) + 1``."""
    corpus_counts = list(corpus_counts)
    if not corpus_counts:
        raise DataError("IDF needs at least one document")
    df = np.zeros(F)
    for c in corpus_counts:
        if c.size != F:
            raise ModelMismatchError(f"counts of size {c.size} in a feature space of {F}")
        for f, v in c.counts.items():
            if v > 0:
                df[f] += 1
    N = len(corpus_counts)
    return IdfVector(np.log((1.0 + N) / (1.0 + df)) + 1.0, N)


def sublinear_tf(count):
    """``ln(c) + 1`` for counts of at least 1, 0 for absent features.

    Unlike ReLoU this keeps singleton counts at 1.
    """
    c = np.asarray(count, dtype=np.float64)
    out = np.zeros_like(c)
    present = c >= 1
    out[present] = np.log(c[present]) + 1.0
    return out


def tfidf_vector(counts: SparseCounts, idf: IdfVector) -> np.ndarray:
    if counts.size != idf.values.shape[0]:
        raise ModelMismatchError(
            f"counts live in a space of {counts.size}, idf in {idf.values.shape[0]}"
        )
    return sublinear_tf(counts.dense()) * idf.values


def bose_counts(docs, codebook: Codebook, n: int = 1) -> list[SparseCounts]:
    return [ngram_counts(hard_assign(d, codebook), n, codebook.K) for d in docs]


def init_idf_weights_embedded(docs, codebook: Codebook) -> np.ndarray:
    if len(docs) == 0:
        raise DataError("IDF initialization needs a non-empty corpus")
    return compute_idf(bose_counts(docs, codebook, 1), codebook.K).values


def init_idf_weights(corpus, table, codebook: Codebook, max_tokens=None) -> np.ndarray:
    """Classical unigram IDF over hard assignments, used to seed ``w_idf``."""
    from .text import DEFAULT_MAX_TOKENS, embed_corpus

    if len(corpus) == 0:
        raise DataError("IDF initialization needs a non-empty corpus")
    docs = embed_corpus(corpus, table, DEFAULT_MAX_TOKENS if max_tokens is None else max_tokens)
    return init_idf_weights_embedded(docs, codebook)


@dataclass
class LinearClassifier:
    weights: np.ndarray
    bias: float
    loss_curve: list = field(default_factory=list)

    def decision_function(self, features) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weights + self.bias

    def predict_proba(self, features) -> np.ndarray:
        z = self.decision_function(features)
        return 0.5 * (1.0 + np.tanh(0.5 * z))


def baseline_train(features, labels, l2=1e-3, epochs=500, lr=0.1, seed=0) -> LinearClassifier:
    """L2-regularized logistic regression by full-batch proximal gradient descent.

    The penalty ``l2/2 * |w|^2`` is applied as a shrinkage step so any
    ``l2`` stays stable; the bias is not penalized.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise DataError(f"features {X.shape} do not match {y.shape[0]} labels")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise DataError("baseline classifier needs both classes present")
    if not np.all(np.isfinite(X)):
        raise DataError("features must be finite")
    rng = np.random.default_rng(seed)
    w = 0.01 * rng.standard_normal(X.shape[1])
    b = 0.0
    n = X.shape[0]
    curve = []
    for _ in range(epochs):
        z = X @ w + b
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        r = p - y
        w = (w - lr * (X.T @ r) / n) / (1.0 + lr * l2)
        b -= lr * float(np.mean(r))
        pc = np.clip(p, 1e-12, 1 - 1e-12)
        curve.append(float(-np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc))))
    return LinearClassifier(w, b, curve)


def write_sparse_features(path, ids, labels, counts) -> None:
    """One line per document: ``<id> <label> f:count f:count ...``."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, label, c in zip(ids, labels, counts):
            feats = " ".join(f"{f}:{v}" for f, v in sorted(c.counts.items()))
            lab = "null" if label is None else str(int(label))
            fh.write(f"{doc_id} {lab} {feats}".rstrip() + "\n")
