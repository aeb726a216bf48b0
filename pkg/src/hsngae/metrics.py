"""F1, relative score and seeded-run confidence intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .events import N_CLUSTERS


class MetricError(ValueError):
    pass


def confusion_matrix(true, pred, n_classes: int = N_CLUSTERS) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise MetricError(f"{true.shape} true labels vs {pred.shape} predictions")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def per_class_f1(confusion: np.ndarray) -> np.ndarray:
    cm = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def f1_score(confusion: np.ndarray, average: str = "macro") -> float:
    """Multiclass F1 over the classes that occur among the true labels.

    ``average="macro"`` weighs those classes equally; ``"weighted"`` weighs
    them by support.
    """
    cm = np.asarray(confusion)
    if cm.sum() <= 0:
        raise MetricError("empty confusion matrix")
    f1 = per_class_f1(cm)
    support = cm.sum(axis=1)
    present = support > 0
    if average == "macro":
        return float(f1[present].mean())
    if average == "weighted":
        return float((f1[present] * support[present]).sum() / support[present].sum())
    raise MetricError(f"unknown averaging {average!r}")


def f1_from_labels(true, pred, average: str = "macro") -> float:
    return f1_score(confusion_matrix(true, pred), average)


def relative_score(model_f1: float, baseline_f1: float) -> float:
    """Model F1 as a percentage of its baseline's F1."""
    if baseline_f1 <= 0:
        raise MetricError("baseline F1 is zero; train the baseline on more target data")
    return 100.0 * model_f1 / baseline_f1


def mean_ci95(values: Sequence[float]) -> tuple[float, float]:
    """Mean and Student-t 95% half-width ``t(0.975, n-1) * s / sqrt(n)``."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise MetricError("need at least two values for a confidence interval")
    s = v.std(ddof=1)
    return float(v.mean()), float(stats.t.ppf(0.975, v.size - 1) * s / math.sqrt(v.size))


@dataclass
class RunSummary:
    model: str
    source: str
    target: str
    seed: int
    f1: float
    relative_score: float = math.nan

    def row(self) -> dict:
        return {
            "model": self.model,
            "source": self.source,
            "target": self.target,
            "seed": self.seed,
            "f1": self.f1,
            "relative_score": self.relative_score,
        }
