"""Binary classification metrics: balanced accuracy, weighted F1, AUROC.

Conventions: the mitotic figure is the positive class; per-class F1 is 0
when precision and recall are both zero or undefined; AUROC counts score
ties as one half (rank / Mann-Whitney formulation, which equals the
trapezoidal ROC area); thresholding is on positive-class probability
with ``p >= threshold`` predicting positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from mitobench.errors import ValidationError


def _as_binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.size == 0:
        raise ValidationError(f"{name}: empty input")
    uniq = np.unique(arr)
    if not np.isin(uniq, (0, 1)).all():
        raise ValidationError(f"{name}: must be binary 0/1, got values {uniq}")
    return arr.astype(np.int64)


def _check_both_classes(labels: np.ndarray) -> None:
    if labels.min() == labels.max():
        raise ValidationError("labels: both classes must be present")


def balanced_accuracy(labels, predictions) -> float:
    """(sensitivity + specificity) / 2."""
    y = _as_binary(labels, "labels")
    p = _as_binary(predictions, "predictions")
    if y.shape != p.shape:
        raise ValidationError("labels/predictions: shape mismatch")
    _check_both_classes(y)
    sensitivity = float(np.sum((y == 1) & (p == 1))) / float(np.sum(y == 1))
    specificity = float(np.sum((y == 0) & (p == 0))) / float(np.sum(y == 0))
    return (sensitivity + specificity) / 2.0


def _f1_for_class(y: np.ndarray, p: np.ndarray, cls: int) -> float:
    tp = float(np.sum((p == cls) & (y == cls)))
    fp = float(np.sum((p == cls) & (y != cls)))
    fn = float(np.sum((p != cls) & (y == cls)))
    denom = 2.0 * tp + fp + fn
    return 2.0 * tp / denom if denom > 0 else 0.0


def weighted_f1(labels, predictions) -> float:
    """Support-weighted mean of per-class F1, each class as its own positive."""
    y = _as_binary(labels, "labels")
    p = _as_binary(predictions, "predictions")
    if y.shape != p.shape:
        raise ValidationError("labels/predictions: shape mismatch")
    _check_both_classes(y)
    n = float(len(y))
    return float(sum(np.sum(y == cls) / n * _f1_for_class(y, p, cls) for cls in (0, 1)))


def auroc(labels, scores) -> float:
    """Probability a random positive outranks a random negative, ties half."""
    y = _as_binary(labels, "labels")
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ValidationError("labels/scores: shape mismatch")
    _check_both_classes(y)
    if not np.isfinite(s).all():
        raise ValidationError("scores: non-finite values present")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class EvalResult:
    n_pos: int
    n_neg: int
    balanced_accuracy: float
    weighted_f1: float
    auroc: float | None
    threshold: float = 0.5
    auroc_omitted: bool = False

    def to_json(self) -> dict:
        return {
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "balanced_accuracy": self.balanced_accuracy,
            "weighted_f1": self.weighted_f1,
            "auroc": self.auroc,
            "threshold": self.threshold,
            "auroc_omitted": self.auroc_omitted,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalResult":
        return cls(
            n_pos=int(obj["n_pos"]),
            n_neg=int(obj["n_neg"]),
            balanced_accuracy=float(obj["balanced_accuracy"]),
            weighted_f1=float(obj["weighted_f1"]),
            auroc=None if obj.get("auroc") is None else float(obj["auroc"]),
            threshold=float(obj.get("threshold", 0.5)),
            auroc_omitted=bool(obj.get("auroc_omitted", False)),
        )


def evaluate(labels, scores, threshold: float = 0.5) -> EvalResult:
    """All three metrics from positive-class probabilities.

    On a single-class test set AUROC is undefined: it is omitted and
    flagged, and the thresholded metrics fall back to the classes
    present (balanced accuracy becomes the mean recall over present
    classes). An empty test set is an error.
    """
    y = _as_binary(labels, "labels")
    s = np.asarray(scores, dtype=np.float64)
    predictions = (s >= threshold).astype(np.int64)
    if y.min() == y.max():
        present = int(y[0])
        recall = float(np.sum(predictions == present)) / float(len(y))
        return EvalResult(
            n_pos=int(np.sum(y == 1)),
            n_neg=int(np.sum(y == 0)),
            balanced_accuracy=recall,
            weighted_f1=_f1_for_class(y, predictions, present),
            auroc=None,
            threshold=threshold,
            auroc_omitted=True,
        )
    return EvalResult(
        n_pos=int(np.sum(y == 1)),
        n_neg=int(np.sum(y == 0)),
        balanced_accuracy=balanced_accuracy(y, predictions),
        weighted_f1=weighted_f1(y, predictions),
        auroc=auroc(y, s),
        threshold=threshold,
    )
