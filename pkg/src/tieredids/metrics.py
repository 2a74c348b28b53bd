"""Confusion-matrix bookkeeping and the three detection metrics.

Label convention: 0 is normal, 1 is attack (the positive class).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def degenerate_ur(self) -> bool:
        """True when no attack samples were evaluated, so UR is undefined."""
        return self.tp + self.fn == 0

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)

    @classmethod
    def from_labels(cls, truth, predicted) -> "ConfusionMatrix":
        truth = np.asarray(truth)
        predicted = np.asarray(predicted)
        if truth.shape != predicted.shape:
            raise ValueError(f"shape mismatch: {truth.shape} vs {predicted.shape}")
        _check_labels(truth)
        _check_labels(predicted)
        t = truth == 1
        p = predicted == 1
        return cls(tp=int(np.sum(t & p)), tn=int(np.sum(~t & ~p)),
                   fp=int(np.sum(~t & p)), fn=int(np.sum(t & ~p)))

    def as_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


def _check_labels(a: np.ndarray) -> None:
    if a.size and not np.isin(a, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")


def accumulate(cm: ConfusionMatrix, truth: int, predicted: int) -> ConfusionMatrix:
    """Return a copy of ``cm`` with exactly one counter incremented."""
    if truth not in (0, 1) or predicted not in (0, 1):
        raise ValueError(f"labels must be 0 or 1, got ({truth}, {predicted})")
    if truth == 1:
        if predicted == 1:
            return ConfusionMatrix(cm.tp + 1, cm.tn, cm.fp, cm.fn)
        return ConfusionMatrix(cm.tp, cm.tn, cm.fp, cm.fn + 1)
    if predicted == 0:
        return ConfusionMatrix(cm.tp, cm.tn + 1, cm.fp, cm.fn)
    return ConfusionMatrix(cm.tp, cm.tn, cm.fp + 1, cm.fn)


def mcc(cm: ConfusionMatrix) -> float:
    """Matthews correlation coefficient; 0.0 when any marginal is empty."""
    denom = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    if denom == 0:
        return 0.0
    # integer products stay exact; only the final division is rounded
    return (cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(denom)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return (cm.tp + cm.tn) / cm.total


def undetected_rate(cm: ConfusionMatrix) -> float:
    """Fraction of attacks labelled normal, FN / (FN + TP).

    Returns 0.0 when there were no attacks; check ``cm.degenerate_ur``
    to tell that apart from a perfect detector.
    """
    if cm.degenerate_ur:
        return 0.0
    return cm.fn / (cm.fn + cm.tp)


def recall_normal(cm: ConfusionMatrix) -> float:
    n = cm.tn + cm.fp
    return cm.tn / n if n else 0.0


def recall_attack(cm: ConfusionMatrix) -> float:
    n = cm.tp + cm.fn
    return cm.tp / n if n else 0.0


def summarize(cm: ConfusionMatrix) -> dict:
    """Metric row in the order used by the report CSV."""
    return {
        "accuracy": accuracy(cm) if cm.total else 0.0,
        "mcc": mcc(cm),
        "ur": undetected_rate(cm),
        **cm.as_dict(),
    }
