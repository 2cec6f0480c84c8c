"""Confusion counts and the five detection metrics.

Malicious (label 1) is the positive class. Two false-positive rates are
reported side by side:

* ``fpr_paper``    = FP / (TP + TN)   -- nonstandard denominator, kept for comparison
* ``fpr_standard`` = FP / (FP + TN)   -- the conventional false-alarm rate

A metric whose denominator is zero is reported as ``None`` and named in
``undefined``; NaN never appears.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import ContractError

METRIC_NAMES = ("acc", "dr", "fpr_paper", "fpr_standard", "precision", "f1")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ContractError(f"confusion counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricsReport:
    acc: Optional[float]
    dr: Optional[float]
    fpr_paper: Optional[float]
    fpr_standard: Optional[float]
    precision: Optional[float]
    f1: Optional[float]
    counts: ConfusionCounts
    undefined: Tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in METRIC_NAMES}
        out.update(tp=self.counts.tp, tn=self.counts.tn, fp=self.counts.fp, fn=self.counts.fn)
        out["undefined"] = list(self.undefined)
        return out


def confusion(predictions, labels) -> ConfusionCounts:
    preds = np.asarray(predictions).astype(np.int64).ravel()
    labs = np.asarray(labels).astype(np.int64).ravel()
    if preds.shape != labs.shape:
        raise ContractError(f"predictions ({preds.size}) and labels ({labs.size}) differ in length")
    if preds.size == 0:
        raise ContractError("confusion needs at least one sample")
    for name, arr in (("predictions", preds), ("labels", labs)):
        if not np.isin(arr, (0, 1)).all():
            raise ContractError(f"{name} must be binary")
    return ConfusionCounts(
        tp=int(np.sum((preds == 1) & (labs == 1))),
        tn=int(np.sum((preds == 0) & (labs == 0))),
        fp=int(np.sum((preds == 1) & (labs == 0))),
        fn=int(np.sum((preds == 0) & (labs == 1))),
    )


def _ratio(num, den):
    return num / den if den else None


def compute_metrics(c: ConfusionCounts) -> MetricsReport:
    if c.total <= 0:
        raise ContractError("metrics need at least one sample")
    acc = _ratio(c.tp + c.tn, c.total)
    dr = _ratio(c.tp, c.tp + c.fn)
    precision = _ratio(c.tp, c.tp + c.fp)
    # 2PR/(P+R) reduces to 2TP/(2TP+FP+FN); the integer form avoids double rounding
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn) if precision and dr else None
    values = dict(
        acc=acc, dr=dr,
        fpr_paper=_ratio(c.fp, c.tp + c.tn),
        fpr_standard=_ratio(c.fp, c.fp + c.tn),
        precision=precision, f1=f1,
    )
    undefined = tuple(name for name in METRIC_NAMES if values[name] is None)
    return MetricsReport(counts=c, undefined=undefined, **values)


def evaluate_predictions(probs, labels, threshold: float = 0.5) -> MetricsReport:
    """Threshold the malicious-class probability and score the result."""
    probs = np.asarray(probs)
    malicious = probs[:, 1] if probs.ndim == 2 else probs
    preds = (malicious >= threshold).astype(np.int64)
    return compute_metrics(confusion(preds, labels))
