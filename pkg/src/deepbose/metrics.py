from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class MetricReport:
    f1_positive: float
    accuracy: float
    macro_precision: float
    macro_recall: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n_docs(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _ratio(num, den):
    return num / den if den else 0.0


def metrics(predictions, labels, threshold: float = 0.5) -> MetricReport:
    """Positive-class F1, accuracy and macro precision/recall.

    A sample is predicted positive when its score is ``>= threshold``.
    Undefined ratios (zero denominators) count as 0.
    """
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions for {y.size} labels")
    if p.size == 0:
        raise ValueError("metrics need at least one sample")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be binary")
    pred = p >= threshold
    truth = y == 1
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    fn = int(np.sum(~pred & truth))

    prec_pos, rec_pos = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    prec_neg, rec_neg = _ratio(tn, tn + fn), _ratio(tn, tn + fp)
    return MetricReport(
        f1_positive=_ratio(2 * prec_pos * rec_pos, prec_pos + rec_pos),
        accuracy=(tp + tn) / (tp + tn + fp + fn),
        macro_precision=(prec_pos + prec_neg) / 2,
        macro_recall=(rec_pos + rec_neg) / 2,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )
