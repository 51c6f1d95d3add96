"""DeepBoSE forward pass.

embedding rows -> DM-Encoder soft assignments -> differentiable bag of
features (sum pooling, ReLoU, IDF attention; or plain average pooling) ->
dense prediction layers. Every intermediate is kept in a ForwardCache so
that :mod:`deepbose.engine` can run the exact backward pass.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import Codebook, _unit_rows, softmax_rows
from .errors import DataError, ModelMismatchError

POOLINGS = ("sum_tfidf", "average")
ACTIVATIONS = ("relu", "sigmoid")


def dm_encode(X, codebook: Codebook) -> np.ndarray:
    """Row-wise softmax of ``-alpha * dissimilarity + b``."""
    X = np.asarray(X, dtype=np.float64)
    xn, _ = _unit_rows(X, "input row")
    tn, _ = _unit_rows(codebook.theta, "codevector")
    return softmax_rows(-codebook.alpha * (1.0 - xn @ tn.T) + codebook.biases)


def pool_average(S) -> np.ndarray:
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[0] == 0:
        raise DataError("cannot pool an empty assignment matrix")
    return S.mean(axis=0)


def pool_sum(S) -> np.ndarray:
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[0] == 0:
        raise DataError("cannot pool an empty assignment matrix")
    return S.sum(axis=0)


def relou(x):
    """``ln(x) + 1`` where ``x > 1``, else 0. Discontinuous at 1."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    above = x > 1.0
    out[above] = np.log(x[above]) + 1.0
    return out if out.ndim else float(out)


def relou_grad(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    above = x > 1.0
    out[above] = 1.0 / x[above]
    return out if out.ndim else float(out)


def idf_attention(tf_scaled, w_idf) -> np.ndarray:
    tf_scaled = np.asarray(tf_scaled, dtype=np.float64)
    w_idf = np.asarray(w_idf, dtype=np.float64)
    if tf_scaled.shape != w_idf.shape:
        raise ModelMismatchError(
            f"idf weights of length {w_idf.shape} do not match features {tf_scaled.shape}"
        )
    return w_idf * tf_scaled


def sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


@dataclass(frozen=True)
class DenseLayer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ModelMismatchError("dense bias must match the weight's output width")


@dataclass(frozen=True)
class DenseStack:
    layers: tuple[DenseLayer, ...]
    dropout_rate: float = 0.0

    def __post_init__(self):
        if not self.layers:
            raise ModelMismatchError("dense stack needs at least one layer")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ModelMismatchError("dense layer widths do not chain")
        last = self.layers[-1]
        if last.weight.shape[1] != 1 or last.activation != "sigmoid":
            raise ModelMismatchError("final dense layer must map to one sigmoid unit")

    @property
    def input_width(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def widths(self) -> list[int]:
        return [self.input_width] + [layer.weight.shape[1] for layer in self.layers]


def _activate(z, activation):
    return np.maximum(z, 0.0) if activation == "relu" else sigmoid(z)


def dense_forward(h, dense: DenseStack, mode="eval", seed=0):
    """Run the prediction layers.

    In ``"train"`` mode every hidden activation goes through inverted
    dropout; ``seed`` may be an int or a ``numpy.random.Generator``.

    Returns ``(y, cache)`` where cache holds pre-activations, activations
    and dropout masks (``None`` in eval mode).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    a = np.asarray(h, dtype=np.float64)
    if a.shape != (dense.input_width,):
        raise ModelMismatchError(f"dense input width {dense.input_width}, got {a.shape}")
    rng = None
    if mode == "train" and dense.dropout_rate > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pre, post, masks = [], [], []
    last = len(dense.layers) - 1
    for i, layer in enumerate(dense.layers):
        z = a @ layer.weight + layer.bias
        a = _activate(z, layer.activation)
        mask = None
        if rng is not None and i < last:
            keep = rng.random(a.shape) >= dense.dropout_rate
            mask = keep / (1.0 - dense.dropout_rate)
            a = a * mask
        pre.append(z)
        post.append(a)
        masks.append(mask)
    return float(a[0]), {"pre": pre, "post": post, "masks": masks}


@dataclass(frozen=True)
class ModelParams:
    codebook: Codebook
    idf_weights: np.ndarray
    dense: DenseStack
    pooling: str = "sum_tfidf"

    def __post_init__(self):
        if self.idf_weights.shape != (self.codebook.K,):
            raise ModelMismatchError(
                f"{self.idf_weights.shape[0]} idf weights for a codebook of K={self.codebook.K}"
            )
        if self.dense.input_width != self.codebook.K:
            raise ModelMismatchError(
                f"dense input width {self.dense.input_width} != codebook K={self.codebook.K}"
            )
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")

    # Named flat view used by the optimizer.
    def arrays(self) -> dict:
        out = {
            "theta": self.codebook.theta,
            "biases": self.codebook.biases,
            "idf": self.idf_weights,
        }
        for i, layer in enumerate(self.dense.layers):
            out[f"W{i}"] = layer.weight
            out[f"c{i}"] = layer.bias
        return out

    def with_arrays(self, arrays: dict) -> "ModelParams":
        cur = self.arrays()
        cur.update(arrays)
        codebook = self.codebook.replace(theta=cur["theta"], biases=cur["biases"])
        layers = tuple(
            DenseLayer(cur[f"W{i}"], cur[f"c{i}"], layer.activation)
            for i, layer in enumerate(self.dense.layers)
        )
        return ModelParams(codebook, cur["idf"], replace(self.dense, layers=layers), self.pooling)

    def to_dict(self) -> dict:
        return {
            "codebook": self.codebook.to_dict(),
            "idf_weights": self.idf_weights.tolist(),
            "dense": [
                {
                    "rows": int(layer.weight.shape[0]),
                    "cols": int(layer.weight.shape[1]),
                    "weights": layer.weight.ravel().tolist(),
                    "bias": layer.bias.tolist(),
                    "activation": layer.activation,
                }
                for layer in self.dense.layers
            ],
            "dropout_rate": self.dense.dropout_rate,
            "pooling": self.pooling,
        }

    @classmethod
    def from_dict(cls, obj) -> "ModelParams":
        try:
            layers = []
            for entry in obj["dense"]:
                w = np.array(entry["weights"], dtype=np.float64)
                if w.size != entry["rows"] * entry["cols"]:
                    raise ModelMismatchError("dense weight count does not match rows x cols")
                layers.append(DenseLayer(w.reshape(entry["rows"], entry["cols"]),
                                         np.array(entry["bias"], dtype=np.float64),
                                         entry["activation"]))
            return cls(
                Codebook.from_dict(obj["codebook"]),
                np.array(obj["idf_weights"], dtype=np.float64),
                DenseStack(tuple(layers), float(obj["dropout_rate"])),
                obj.get("pooling", "sum_tfidf"),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed model document: {exc}") from None

    def save(self, path, meta: dict | None = None) -> None:
        obj = self.to_dict()
        if meta is not None:
            obj["meta"] = meta
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path, with_meta=False):
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: {exc}") from None
        params = cls.from_dict(obj)
        return (params, obj.get("meta", {})) if with_meta else params


@dataclass
class ForwardCache:
    X: np.ndarray
    xn: np.ndarray
    xnorm: np.ndarray
    tn: np.ndarray
    tnorm: np.ndarray
    V: np.ndarray
    S: np.ndarray
    pooled: np.ndarray
    scaled: np.ndarray | None
    h: np.ndarray
    dense: dict
    y: float
    pooling: str
    mode: str
    shapes: tuple = field(default=())


def forward(doc, params: ModelParams, pooling=None, mode="eval", seed=0) -> ForwardCache:
    X = doc.matrix if hasattr(doc, "matrix") else doc
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("forward needs a non-empty 2-D embedded document")
    cb = params.codebook
    if X.shape[1] != cb.dim:
        raise ModelMismatchError(f"embedding width {X.shape[1]} != codebook width {cb.dim}")
    pooling = pooling or params.pooling
    if pooling not in POOLINGS:
        raise ValueError(f"pooling must be one of {POOLINGS}, got {pooling!r}")

    xn, xnorm = _unit_rows(X, "input row")
    tn, tnorm = _unit_rows(cb.theta, "codevector")
    V = 1.0 - xn @ tn.T
    S = softmax_rows(-cb.alpha * V + cb.biases)
    if pooling == "average":
        pooled = pool_average(S)
        scaled = None
        h = pooled
    else:
        pooled = pool_sum(S)
        scaled = relou(pooled)
        h = idf_attention(scaled, params.idf_weights)
    y, dcache = dense_forward(h, params.dense, mode, seed)
    return ForwardCache(X, xn, xnorm, tn, tnorm, V, S, pooled, scaled, h, dcache, y,
                        pooling, mode, (X.shape, cb.theta.shape, len(params.dense.layers)))


def predict_proba(docs, params: ModelParams) -> np.ndarray:
    return np.array([forward(d, params).y for d in docs])
