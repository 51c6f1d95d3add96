"""Independent oracles and fixture builders shared by the test modules."""
from __future__ import annotations

import numpy as np

from deepbose.clustering import Codebook
from deepbose.engine import dense_init, weighted_bce
from deepbose.model import ModelParams, forward

FD_STEP = 1e-5


def rel_err(a, n):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))


def micro_model(seed, m=8, block_sizes=(3, 3), hidden=(16, 16), n_rows=12, alpha=5.0,
                dropout=0.0):
    """Random micro-model plus one document, both drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    blocks = [(f"e{i}", rng.standard_normal((k, m))) for i, k in enumerate(block_sizes)]
    K = sum(block_sizes)
    cb = Codebook.from_blocks(blocks, alpha, biases=0.3 * rng.standard_normal(K))
    dense = dense_init([K, *hidden, 1], seed=seed + 1, dropout_rate=dropout)
    # Non-zero biases so every layer's bias gradient is exercised.
    layers = tuple(type(l)(l.weight, 0.1 * rng.standard_normal(l.bias.shape), l.activation)
                   for l in dense.layers)
    dense = type(dense)(layers, dense.dropout_rate)
    idf = rng.uniform(0.5, 2.0, K)
    params = ModelParams(cb, idf, dense)
    X = rng.standard_normal((n_rows, m))
    return params, X


def well_conditioned(params, X, margin=1e-3):
    """False when a finite-difference probe could straddle a kink.

    The kinks are ReLoU at a pooled count of 1 and ReLU at zero.
    """
    cache = forward(X, params)
    if np.min(np.abs(cache.pooled - 1.0)) < margin:
        return False
    for z, layer in zip(cache.dense["pre"], params.dense.layers):
        if layer.activation == "relu" and np.min(np.abs(z)) < margin:
            return False
    return True


def conditioned_micro_models(count, start=0, **kw):
    out = []
    seed = start
    while len(out) < count:
        params, X = micro_model(seed, **kw)
        if well_conditioned(params, X):
            out.append((seed, params, X))
        seed += 1
    return out


def loss_of(params, X, y, w_pos, w_neg):
    return weighted_bce(forward(X, params).y, y, w_pos, w_neg)


def fd_param_grads(f, params, step=FD_STEP):
    """Central differences of ``f(params)`` for every named array."""
    out = {}
    base = params.arrays()
    for key, arr in base.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += step
            minus[idx] -= step
            g[idx] = (f(params.with_arrays({key: plus})) - f(params.with_arrays({key: minus}))) / (2 * step)
        out[key] = g
    return out


def fd_input_grad(f, X, step=FD_STEP):
    g = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        plus, minus = X.copy(), X.copy()
        plus[idx] += step
        minus[idx] -= step
        g[idx] = (f(plus) - f(minus)) / (2 * step)
    return g


def separated_pairs(tilt=0.3, dim=8, seed=0):
    """Six unit vectors forming three pairs; pair ``p`` is rows ``2p`` and ``2p+1``.

    The anchors are orthonormal. The second member of each pair leans away from
    the other anchors, giving within-pair dissimilarity ~0.04 against >= 1
    across pairs. A random rotation keeps the layout off the coordinate axes.
    """
    anchors = np.eye(3)
    rows = []
    for a in anchors:
        away = -(anchors.sum(axis=0) - a)
        rows += [a, a + tilt * away / np.linalg.norm(away)]
    X = np.array(rows)
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    X = np.pad(X, ((0, 0), (0, dim - 3)))
    Q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((dim, dim)))
    return X @ Q.T


def two_clusters(n_per=10, dim=4, spread=0.15, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.eye(dim)[:2]
    X = np.vstack([c + spread * rng.standard_normal((n_per, dim)) for c in centers])
    return X


def confusion_oracle(preds, labels, threshold=0.5):
    """Brute-force tp/fp/tn/fn by explicit enumeration."""
    tp = fp = tn = fn = 0
    for p, y in zip(preds, labels):
        positive = p >= threshold
        if positive and y == 1:
            tp += 1
        elif positive and y == 0:
            fp += 1
        elif not positive and y == 0:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


def metrics_oracle(preds, labels, threshold=0.5):
    tp, fp, tn, fn = confusion_oracle(preds, labels, threshold)

    def div(a, b):
        return a / b if b else 0.0

    pp, rp = div(tp, tp + fp), div(tp, tp + fn)
    pn, rn = div(tn, tn + fn), div(tn, tn + fp)
    return {
        "tp": tp, "fp": fp, "tn": tn, "fn": fn,
        "f1_positive": div(2 * pp * rp, pp + rp),
        "accuracy": (tp + tn) / len(labels),
        "macro_precision": (pp + pn) / 2,
        "macro_recall": (rp + rn) / 2,
    }
