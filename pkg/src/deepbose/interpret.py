"""Token saliency, population sub-emotion histograms and evaluation metrics."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .engine import backward
from .errors import DataError
from .metrics import MetricReport, metrics
from .model import ModelParams, forward

__all__ = ["SaliencyMap", "EmotionHistogram", "MetricReport", "saliency",
           "emotion_histogram", "metrics", "POPULATIONS"]

POPULATIONS = {"healthy": 0, "depressed": 1}


@dataclass(frozen=True)
class SaliencyMap:
    tokens: tuple[str, ...]
    scores: np.ndarray
    id: str | None = None

    def to_dict(self) -> dict:
        return {"id": self.id, "tokens": list(self.tokens), "scores": self.scores.tolist()}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")


def saliency(doc, params: ModelParams) -> SaliencyMap:
    """Per-token sum of ``|d y / d x_l|`` over the token's embedding components.

    The gradient is taken of the eval-mode prediction, not of the loss.
    """
    cache = forward(doc, params, mode="eval")
    grads = backward(cache, params, target="output")
    scores = np.abs(grads.d_input).sum(axis=1)
    tokens = tuple(getattr(doc, "kept_tokens", ())) or tuple(str(i) for i in range(len(scores)))
    return SaliencyMap(tokens, scores, getattr(doc, "id", None))


@dataclass(frozen=True)
class EmotionHistogram:
    mean_weights: np.ndarray
    emotions: tuple[str, ...]
    population: str | None
    n_docs: int

    def block_mass(self, emotion: str) -> float:
        mask = np.array([e == emotion for e in self.emotions])
        return float(self.mean_weights[mask].sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "emotion", "mean_weight"])
            for i, (name, w) in enumerate(zip(self.emotions, self.mean_weights)):
                writer.writerow([i, name, repr(float(w))])


def emotion_histogram(docs, params: ModelParams, population: str | None = None,
                      table=None) -> EmotionHistogram:
    """Mean document representation ``h`` over a population.

    ``docs`` is either a list of embedded documents or a Corpus (then
    ``table`` is required). ``population`` filters on labels:
    ``"healthy"`` (0), ``"depressed"`` (1) or ``None`` for everyone.
    """
    if table is not None:
        from .text import embed_corpus

        docs = embed_corpus(docs, table)
    if population is not None:
        if population not in POPULATIONS:
            raise ValueError(f"population must be one of {sorted(POPULATIONS)}")
        docs = [d for d in docs if getattr(d, "label", None) == POPULATIONS[population]]
    if not docs:
        raise DataError(f"population {population!r} is empty")
    total = np.zeros(params.codebook.K)
    for d in docs:
        total += forward(d, params, mode="eval").h
    return EmotionHistogram(total / len(docs), tuple(params.codebook.index_emotions()),
                            population, len(docs))
