"""Confusion-matrix accounting and positive-class precision / recall / F1."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class MetricTriple:
    """Precision, recall and F1 of the positive class.

    A metric whose denominator is zero is stored as NaN and its
    ``*_defined`` flag is False; it is never silently reported as 0.
    """

    precision: float
    recall: float
    f1: float
    precision_defined: bool = True
    recall_defined: bool = True
    f1_defined: bool = True

    def f1_or_zero(self) -> float:
        return self.f1 if self.f1_defined else 0.0

    def to_dict(self) -> dict:
        return {
            "precision": self.precision if self.precision_defined else None,
            "recall": self.recall if self.recall_defined else None,
            "f1": self.f1 if self.f1_defined else None,
        }

    def render(self) -> str:
        return "P={} R={} F1={}".format(
            percent(self.precision) if self.precision_defined else "n/a",
            percent(self.recall) if self.recall_defined else "n/a",
            percent(self.f1) if self.f1_defined else "n/a",
        )


def confusion(y_true, y_pred) -> ConfusionMatrix:
    """Count tp/fp/fn/tn with class 1 as the positive class."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.ndim != 1 or y_pred.ndim != 1:
        raise ValueError("label vectors must be one-dimensional")
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape[0]} true labels vs {y_pred.shape[0]} predictions")
    if y_true.size == 0:
        raise ValueError("cannot build a confusion matrix from empty vectors")
    for name, v in (("y_true", y_true), ("y_pred", y_pred)):
        if not np.isin(v, (0, 1)).all():
            raise ValueError(f"{name} contains a non-binary entry")
    t = y_true.astype(bool)
    p = y_pred.astype(bool)
    return ConfusionMatrix(
        tp=int(np.count_nonzero(t & p)),
        fp=int(np.count_nonzero(~t & p)),
        fn=int(np.count_nonzero(t & ~p)),
        tn=int(np.count_nonzero(~t & ~p)),
    )


def metric_triple(cm: ConfusionMatrix) -> MetricTriple:
    nan = math.nan
    p_den = cm.tp + cm.fp
    r_den = cm.tp + cm.fn
    precision = cm.tp / p_den if p_den else nan
    recall = cm.tp / r_den if r_den else nan
    if not (p_den and r_den):
        return MetricTriple(precision, recall, nan, bool(p_den), bool(r_den), False)
    if precision + recall == 0.0:
        # tp == 0 with both denominators positive: the harmonic mean tends to 0
        f1 = 0.0
    else:
        f1 = 2 * (precision * recall) / (precision + recall)
    return MetricTriple(precision, recall, f1)


def evaluate_labels(y_true, y_pred) -> MetricTriple:
    return metric_triple(confusion(y_true, y_pred))


def percent(value: float) -> str:
    """Integer percent, rounding half up (0.98477 -> '98%', 0.985 -> '99%')."""
    if value is None or math.isnan(value):
        return "n/a"
    d = (Decimal(repr(float(value))) * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP)
    return f"{int(d)}%"
