"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np


def check_document(doc, dim=None) -> np.ndarray:
    X = doc.matrix if hasattr(doc, "matrix") else doc
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"an embedded document must be 2-D, got {X.ndim}-D")
    if X.shape[0] == 0:
        raise ValueError("an embedded document needs at least one row")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"expected embeddings of width {dim}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("embedded document contains non-finite values")
    return X


def check_documents(docs, dim=None) -> list[np.ndarray]:
    """Validate a ragged collection of ``(n_tokens, dim)`` matrices.

    Accepts embedded documents or plain arrays; all must share one width.
    """
    if isinstance(docs, np.ndarray) and docs.ndim == 2:
        raise ValueError("expected a sequence of documents, got a single 2-D array")
    out = [check_document(d, dim) for d in docs]
    if not out:
        raise ValueError("no documents given")
    widths = {X.shape[1] for X in out}
    if len(widths) > 1:
        raise ValueError(f"documents have inconsistent embedding widths {sorted(widths)}")
    return out


def check_binary_labels(y, n=None, both_classes=True) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be 1-D")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"got {y.shape[0]} labels for {n} documents")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    y = y.astype(int)
    if both_classes and len(np.unique(y)) < 2:
        raise ValueError("both classes must be present")
    return y
