"""Exact backward pass, weighted binary cross-entropy and the supervised
training loop."""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, DivergenceError, ModelMismatchError
from .metrics import metrics
from .model import DenseLayer, DenseStack, ForwardCache, ModelParams, forward, relou_grad
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

CLAMP = 1e-12
PARAM_GROUPS = ("codebook", "biases", "idf", "dense")
DEFAULT_LR = {"stl": 1e-6, "utl": 1e-5}
THREADS_ENV = "DEEPBOSE_NUM_THREADS"


def weighted_bce(y_pred, y, w_pos=1.0, w_neg=1.0):
    """Class-weighted binary cross-entropy; arrays give the mean over samples."""
    p = np.clip(np.asarray(y_pred, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    y = np.asarray(y, dtype=np.float64)
    loss = -(w_pos * y * np.log(p) + w_neg * (1.0 - y) * np.log1p(-p))
    return float(np.mean(loss))


def class_weights(labels) -> tuple[float, float]:
    """Balanced weights ``N / (2 N_pos)`` and ``N / (2 N_neg)``.

    Accepts a Corpus or a label sequence.
    """
    if hasattr(labels, "labels"):
        labels = labels.labels
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("class weights need both classes present")
    n = n_pos + n_neg
    return n / (2 * n_pos), n / (2 * n_neg)


@dataclass
class Gradients:
    d_codebook: np.ndarray
    d_biases: np.ndarray
    d_idf: np.ndarray
    d_dense: list
    d_input: np.ndarray

    def as_arrays(self) -> dict:
        """Same keys as :meth:`ModelParams.arrays`."""
        out = {"theta": self.d_codebook, "biases": self.d_biases, "idf": self.d_idf}
        for i, (dW, dc) in enumerate(self.d_dense):
            out[f"W{i}"] = dW
            out[f"c{i}"] = dc
        return out


def backward(cache: ForwardCache, params: ModelParams, y=None, w_pos=1.0, w_neg=1.0,
             target="loss") -> Gradients:
    """Reverse pass through the cached forward computation.

    ``target="loss"`` differentiates the weighted BCE of label ``y``;
    ``target="output"`` differentiates the prediction itself (saliency).
    """
    cb = params.codebook
    if cache.shapes != (cache.X.shape, cb.theta.shape, len(params.dense.layers)):
        raise ModelMismatchError("forward cache was produced with different parameters")
    p = cache.y
    if target == "output":
        g = np.array([p * (1.0 - p)])
    elif target == "loss":
        if y not in (0, 1):
            raise ValueError("backward on the loss needs a binary label")
        if CLAMP <= p <= 1.0 - CLAMP:
            g = np.array([-w_pos * y * (1.0 - p) + w_neg * (1 - y) * p])
        else:
            g = np.zeros(1)
    else:
        raise ValueError(f"unknown target {target!r}")

    layers = params.dense.layers
    pre, post, masks = cache.dense["pre"], cache.dense["post"], cache.dense["masks"]
    d_dense = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        a_in = cache.h if i == 0 else post[i - 1]
        d_dense[i] = (np.outer(a_in, g), g.copy())
        da = layers[i].weight @ g
        if i == 0:
            dh = da
            break
        prev = layers[i - 1]
        if masks[i - 1] is not None:
            da = da * masks[i - 1]
        if prev.activation == "relu":
            g = da * (pre[i - 1] > 0)
        else:
            s = post[i - 1] if masks[i - 1] is None else np.exp(-np.logaddexp(0, -pre[i - 1]))
            g = da * s * (1.0 - s)

    n = cache.X.shape[0]
    if cache.pooling == "average":
        d_idf = np.zeros_like(params.idf_weights)
        d_pooled = dh / n
    else:
        d_idf = dh * cache.scaled
        d_pooled = dh * params.idf_weights * relou_grad(cache.pooled)
    # Every row of S receives the same upstream gradient from the pooling.
    S = cache.S
    dZ = S * (d_pooled[None, :] - (S @ d_pooled)[:, None])
    d_biases = dZ.sum(axis=0)
    dC = cb.alpha * dZ
    d_xn = dC @ cache.tn
    d_tn = dC.T @ cache.xn
    d_input = (d_xn - cache.xn * np.sum(cache.xn * d_xn, axis=1, keepdims=True)) / cache.xnorm[:, None]
    d_theta = (d_tn - cache.tn * np.sum(cache.tn * d_tn, axis=1, keepdims=True)) / cache.tnorm[:, None]
    return Gradients(d_theta, d_biases, d_idf, d_dense, d_input)


def dense_init(widths, seed=0, dropout_rate=0.0) -> DenseStack:
    """Glorot-uniform weights, zero biases, ReLU hidden units, sigmoid output."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or widths[-1] != 1 or min(widths) < 1:
        raise ConfigError(f"dense widths must run from K down to 1, got {widths}")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        act = "sigmoid" if i == len(widths) - 2 else "relu"
        layers.append(DenseLayer(rng.uniform(-limit, limit, (fan_in, fan_out)),
                                 np.zeros(fan_out), act))
    return DenseStack(tuple(layers), dropout_rate)


@dataclass
class TrainConfig:
    lr: float | None = None
    epochs: int = 100
    batch_size: int = 16
    class_weighted: bool = True
    seed: int = 0
    mode: str = "stl"
    alpha: float | None = None
    pooling: str | None = None
    patience: int = 10
    threshold: float = 0.5
    trainable: tuple | None = None
    n_jobs: int | None = None

    def __post_init__(self):
        if self.mode not in DEFAULT_LR:
            raise ConfigError(f"mode must be 'utl' or 'stl', got {self.mode!r}")
        if self.lr is None:
            self.lr = DEFAULT_LR[self.mode]
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.trainable is None:
            # Offline-representation regime: only the classifier learns.
            self.trainable = PARAM_GROUPS if self.mode == "stl" else ("dense",)
        bad = set(self.trainable) - set(PARAM_GROUPS)
        if bad:
            raise ConfigError(f"unknown parameter groups {sorted(bad)}")

    def threads(self) -> int:
        if self.n_jobs is not None:
            return max(1, int(self.n_jobs))
        return max(1, int(os.environ.get(THREADS_ENV, "1")))


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_f1: list = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self):
        return len(self.train_loss)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_loss", "val_f1"])
            for i, row in enumerate(zip(self.train_loss, self.val_loss, self.val_f1), start=1):
                writer.writerow([i, *(repr(float(v)) for v in row)])


def _group_keys(params: ModelParams, trainable) -> list[str]:
    keys = []
    if "codebook" in trainable:
        keys.append("theta")
    if "biases" in trainable:
        keys.append("biases")
    if "idf" in trainable:
        keys.append("idf")
    if "dense" in trainable:
        for i in range(len(params.dense.layers)):
            keys += [f"W{i}", f"c{i}"]
    return keys


def _sample_grad(args):
    X, y, params, w_pos, w_neg, seed = args
    cache = forward(X, params, mode="train", seed=np.random.default_rng(seed))
    loss = weighted_bce(cache.y, y, w_pos, w_neg)
    return loss, backward(cache, params, y, w_pos, w_neg).as_arrays()


def batch_gradient(params, docs, labels, w_pos, w_neg, seeds, pool=None):
    """Mean loss and gradient over a batch, summed in sample order."""
    jobs = [(d, int(y), params, w_pos, w_neg, s) for d, y, s in zip(docs, labels, seeds)]
    results = list(pool.map(_sample_grad, jobs)) if pool is not None else list(map(_sample_grad, jobs))
    total = None
    loss = 0.0
    for l, g in results:
        loss += l
        if total is None:
            total = {k: v.copy() for k, v in g.items()}
        else:
            for k in total:
                total[k] += g[k]
    n = len(results)
    return loss / n, {k: v / n for k, v in total.items()}


def evaluate_loss(params, docs, labels, w_pos=1.0, w_neg=1.0):
    preds = np.array([forward(d, params).y for d in docs])
    return weighted_bce(preds, labels, w_pos, w_neg), preds


def _matrices(docs):
    return [d.matrix if hasattr(d, "matrix") else np.asarray(d, dtype=np.float64) for d in docs]


def fit_embedded(docs, labels, params: ModelParams, cfg: TrainConfig,
                 val_docs=None, val_labels=None):
    """Mini-batch Adam on embedded documents.

    The returned parameters are those of the epoch with the best validation
    F1 (ties go to the lower validation loss). Training stops once ``patience``
    epochs pass without a strict F1 gain. Without a validation set the
    training set is used for selection.
    """
    docs = _matrices(docs)
    labels = np.asarray(labels, dtype=int)
    if len(docs) == 0:
        raise DataError("cannot train on an empty corpus")
    w_pos, w_neg = class_weights(labels) if cfg.class_weighted else (1.0, 1.0)
    if val_docs is None:
        val_docs, val_labels = docs, labels
    else:
        val_docs = _matrices(val_docs)
        val_labels = np.asarray(val_labels, dtype=int)

    if cfg.alpha is not None and cfg.alpha != params.codebook.alpha:
        params = replace(params, codebook=params.codebook.replace(alpha=float(cfg.alpha)))
    if cfg.pooling is not None and cfg.pooling != params.pooling:
        params = replace(params, pooling=cfg.pooling)

    history = TrainHistory()
    if cfg.epochs == 0:
        return params, history

    n = len(docs)
    batch = n if n < 64 else cfg.batch_size
    keys = _group_keys(params, cfg.trainable)
    state = AdamState()
    best = params
    best_key = None
    best_f1 = -1.0
    wait = 0
    threads = cfg.threads()
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
            for start in range(0, n, batch):
                idx = order[start:start + batch]
                seeds = [[cfg.seed, epoch, int(i)] for i in idx]
                loss, grads = batch_gradient(params, [docs[i] for i in idx], labels[idx],
                                             w_pos, w_neg, seeds, pool)
                if not np.isfinite(loss):
                    raise DivergenceError(f"training loss became non-finite at epoch {epoch}")
                arrays, state = adam_step(params.arrays(), {k: grads[k] for k in keys},
                                          state, cfg.lr)
                params = params.with_arrays(arrays)

            train_loss, _ = evaluate_loss(params, docs, labels, w_pos, w_neg)
            val_loss, preds = evaluate_loss(params, val_docs, val_labels, w_pos, w_neg)
            if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
                raise DivergenceError(f"loss became non-finite at epoch {epoch}")
            f1 = metrics(preds, val_labels, cfg.threshold).f1_positive
            history.train_loss.append(train_loss)
            history.val_loss.append(val_loss)
            history.val_f1.append(f1)
            log.info("epoch %d train_loss=%.6f val_loss=%.6f val_f1=%.4f",
                     epoch, train_loss, val_loss, f1)

            key = (f1, -val_loss)
            if best_key is None or key > best_key:
                best, best_key = params, key
                history.best_epoch = epoch
            # Patience counts epochs without a strict F1 gain.
            if f1 > best_f1:
                best_f1, wait = f1, 0
            else:
                wait += 1
                if wait >= cfg.patience:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    return best, history


def train_supervised(corpus, table, params: ModelParams, cfg: TrainConfig, val_corpus=None,
                     max_tokens=None):
    """Embed the corpora and run :func:`fit_embedded`."""
    from .text import DEFAULT_MAX_TOKENS, embed_corpus

    if len(corpus) == 0:
        raise DataError("cannot train on an empty corpus")
    max_tokens = DEFAULT_MAX_TOKENS if max_tokens is None else max_tokens
    docs = embed_corpus(corpus, table, max_tokens)
    labels = corpus.labels
    if val_corpus is not None:
        val_docs = embed_corpus(val_corpus, table, max_tokens)
        return fit_embedded(docs, labels, params, cfg, val_docs, val_corpus.labels)
    return fit_embedded(docs, labels, params, cfg)
