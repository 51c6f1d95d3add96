"""scikit-learn style wrappers around the functional core.

Documents are ragged, so ``X`` is always a sequence of ``(n_tokens, m)``
matrices (or :class:`~deepbose.text.EmbeddedDoc` objects), never a single
2-D array.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import baseline as bl
from .clustering import (
    ApConfig,
    DmaeConfig,
    affinity_propagation,
    fit_lexicon_blocks,
    init_block_from_ap,
    pairwise_dissimilarity,
    softmax_rows,
    train_dmae_block,
    Codebook,
)
from .engine import TrainConfig, dense_init, fit_embedded
from .interpret import saliency
from .model import ModelParams, forward
from .validation import check_binary_labels, check_documents


class DMAE(BaseEstimator, ClusterMixin, TransformerMixin):
    """Shallow dissimilarity-mixture autoencoder seeded by affinity propagation.

    Parameters
    ----------
    alpha : float
        Inverse softmax temperature of the soft assignments.
    lr, epochs : float, int
        Full-batch Adam settings; ``epochs=0`` keeps the AP exemplars.
    preference, damping, max_iter, convergence_window
        Affinity propagation settings.
    """

    def __init__(self, alpha=100.0, lr=1e-5, epochs=100, preference="median", damping=0.9,
                 max_iter=200, convergence_window=15, seed=0):
        self.alpha = alpha
        self.lr = lr
        self.epochs = epochs
        self.preference = preference
        self.damping = damping
        self.max_iter = max_iter
        self.convergence_window = convergence_window
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.ap_ = affinity_propagation(-pairwise_dissimilarity(X, X), self.preference,
                                        self.damping, self.max_iter, self.convergence_window)
        theta0 = init_block_from_ap(X, self.ap_)
        self.cluster_centers_, log = train_dmae_block(X, theta0, self.alpha, self.lr,
                                                      self.epochs, self.seed)
        self.loss_curve_ = log.loss_per_epoch
        self.n_features_in_ = X.shape[1]
        self.labels_ = self.predict(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return softmax_rows(-self.alpha * pairwise_dissimilarity(X, self.cluster_centers_))

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return np.argmin(pairwise_dissimilarity(X, self.cluster_centers_), axis=1)


class SubEmotionCodebook(BaseEstimator):
    """Learn one DMAE block per lexicon emotion and stack them."""

    def __init__(self, alpha=100.0, lr=1e-5, epochs=100, preference="median", damping=0.9,
                 max_iter=200, convergence_window=15, seed=0, n_jobs=1):
        self.alpha = alpha
        self.lr = lr
        self.epochs = epochs
        self.preference = preference
        self.damping = damping
        self.max_iter = max_iter
        self.convergence_window = convergence_window
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, lexicon, table):
        ap = ApConfig(self.preference, self.damping, self.max_iter, self.convergence_window)
        dmae = DmaeConfig(self.lr, self.epochs, self.seed)
        self.blocks_ = fit_lexicon_blocks(lexicon, table, self.alpha, ap, dmae, self.n_jobs)
        self.codebook_ = Codebook.from_blocks([(b.name, b.theta) for b in self.blocks_],
                                              self.alpha)
        return self


class BoSEVectorizer(BaseEstimator, TransformerMixin):
    """Hard sub-emotion n-gram counts with sublinear TF-IDF weighting."""

    def __init__(self, codebook=None, ngram=1):
        self.codebook = codebook
        self.ngram = ngram

    def _check(self):
        if self.codebook is None:
            raise ValueError("BoSEVectorizer needs a codebook")
        if self.ngram not in (1, 2):
            raise ValueError("ngram must be 1 or 2")

    def counts(self, X):
        self._check()
        docs = check_documents(X, self.codebook.dim)
        return bl.bose_counts(docs, self.codebook, self.ngram)

    def fit(self, X, y=None):
        counts = self.counts(X)
        self.n_features_ = self.codebook.K ** self.ngram
        self.idf_ = bl.compute_idf(counts, self.n_features_)
        return self

    def transform(self, X):
        check_is_fitted(self, "idf_")
        return np.array([bl.tfidf_vector(c, self.idf_) for c in self.counts(X)])


class _BinaryProbaMixin:
    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= self.threshold).astype(int)


class BoSEClassifier(_BinaryProbaMixin, ClassifierMixin, BaseEstimator):
    """Offline BoSE features followed by logistic regression."""

    def __init__(self, codebook=None, ngram=1, l2=1e-3, epochs=500, lr=0.1, seed=0,
                 threshold=0.5):
        self.codebook = codebook
        self.ngram = ngram
        self.l2 = l2
        self.epochs = epochs
        self.lr = lr
        self.seed = seed
        self.threshold = threshold

    def fit(self, X, y):
        docs = check_documents(X)
        y = check_binary_labels(y, len(docs))
        self.vectorizer_ = BoSEVectorizer(self.codebook, self.ngram).fit(docs)
        feats = self.vectorizer_.transform(docs)
        self.linear_ = bl.baseline_train(feats, y, self.l2, self.epochs, self.lr, self.seed)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "linear_")
        p = self.linear_.predict_proba(self.vectorizer_.transform(X))
        return np.column_stack([1.0 - p, p])


class DeepBoSEClassifier(_BinaryProbaMixin, ClassifierMixin, BaseEstimator):
    """End-to-end DeepBoSE model.

    ``fit`` seeds the IDF attention from classical IDF over the training
    documents and the dense stack with Glorot-uniform weights, then trains
    with class-weighted BCE and Adam. ``params_`` holds the selected model.
    """

    def __init__(self, codebook=None, hidden_layer_sizes=(64, 64), dropout=0.2,
                 pooling="sum_tfidf", lr=None, epochs=100, batch_size=16, class_weighted=True,
                 mode="stl", patience=10, threshold=0.5, trainable=None, seed=0, n_jobs=None):
        self.codebook = codebook
        self.hidden_layer_sizes = hidden_layer_sizes
        self.dropout = dropout
        self.pooling = pooling
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.class_weighted = class_weighted
        self.mode = mode
        self.patience = patience
        self.threshold = threshold
        self.trainable = trainable
        self.seed = seed
        self.n_jobs = n_jobs

    def init_params(self, docs) -> ModelParams:
        if self.codebook is None:
            raise ValueError("DeepBoSEClassifier needs a codebook")
        cb = self.codebook
        widths = [cb.K, *self.hidden_layer_sizes, 1]
        return ModelParams(cb, bl.init_idf_weights_embedded(docs, cb),
                           dense_init(widths, self.seed, self.dropout), self.pooling)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                           class_weighted=self.class_weighted, seed=self.seed, mode=self.mode,
                           pooling=self.pooling, patience=self.patience,
                           threshold=self.threshold,
                           trainable=None if self.trainable is None else tuple(self.trainable),
                           n_jobs=self.n_jobs)

    def fit(self, X, y, X_val=None, y_val=None, init_params=None):
        dim = None if self.codebook is None else self.codebook.dim
        docs = check_documents(X, dim)
        y = check_binary_labels(y, len(docs))
        if X_val is not None:
            X_val = check_documents(X_val, dim)
            y_val = check_binary_labels(y_val, len(X_val), both_classes=False)
        params = init_params if init_params is not None else self.init_params(docs)
        self.init_params_ = params
        self.params_, self.history_ = fit_embedded(docs, y, params, self.train_config(),
                                                   X_val, y_val)
        self.classes_ = np.array([0, 1])
        return self

    @classmethod
    def from_params(cls, params: ModelParams, **kwargs) -> "DeepBoSEClassifier":
        est = cls(codebook=params.codebook, pooling=params.pooling, **kwargs)
        est.params_ = params
        est.classes_ = np.array([0, 1])
        return est

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        docs = check_documents(X, self.params_.codebook.dim)
        p = np.array([forward(d, self.params_).y for d in docs])
        return np.column_stack([1.0 - p, p])

    def transform(self, X):
        """Document representations ``h`` (eval mode)."""
        check_is_fitted(self, "params_")
        docs = check_documents(X, self.params_.codebook.dim)
        return np.array([forward(d, self.params_).h for d in docs])

    def saliency(self, doc):
        check_is_fitted(self, "params_")
        return saliency(doc, self.params_)
