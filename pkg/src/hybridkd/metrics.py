"""Classification metrics: accuracy, macro P/R/F1, one-vs-rest AUC, macro mAP.

Conventions: argmax ties go to the lowest class index; 0/0 in precision or
recall counts as 0; a class with no positives (or, for AUC, no negatives)
is left out of the macro average for AUC and AP, and the average over an
empty set is 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import DataError, DimensionError


@dataclass
class EvalResult:
    accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    auc_macro: float
    map_macro: float
    confusion: np.ndarray

    def to_dict(self, with_confusion: bool = False) -> Dict:
        d = asdict(self)
        if with_confusion:
            d["confusion"] = self.confusion.tolist()
        else:
            d.pop("confusion")
        return d


def _check(scores: np.ndarray, labels: np.ndarray, n_classes: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, int]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or labels.shape != (scores.shape[0],):
        raise DimensionError(f"scores {scores.shape} and labels {labels.shape} do not line up")
    c = scores.shape[1] if n_classes is None else n_classes
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"labels must lie in [0, {c})")
    return scores, labels.astype(np.int64), c


def confusion_matrix(labels: np.ndarray, preds: np.ndarray, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def per_class_prf(cm: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    tp = np.diag(cm).astype(np.float64)
    pred_pos = cm.sum(axis=0)
    true_pos = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(pred_pos > 0, tp / pred_pos, 0.0)
        rec = np.where(true_pos > 0, tp / true_pos, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    return prec, rec, f1


def _ranked_counts(score: np.ndarray, positive: np.ndarray):
    """Cumulative (TP, FP) after admitting each distinct score, highest first."""
    order = np.argsort(-score, kind="mergesort")
    s = score[order]
    pos = positive[order].astype(np.float64)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(pos)[last]
    fp = np.cumsum(1.0 - pos)[last]
    return tp, fp


def binary_auc(score: np.ndarray, positive: np.ndarray) -> float:
    """Trapezoidal ROC area with one operating point per distinct score."""
    tp, fp = _ranked_counts(score, positive)
    n_pos, n_neg = tp[-1], fp[-1]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def binary_average_precision(score: np.ndarray, positive: np.ndarray) -> float:
    """Area under the interpolated PR curve (max precision at recall >= r)."""
    tp, fp = _ranked_counts(score, positive)
    recall = tp / tp[-1]
    precision = tp / (tp + fp)
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * interp))


def per_class_auc(scores, labels, n_classes=None) -> List[Optional[float]]:
    scores, labels, c = _check(scores, labels, n_classes)
    out = []
    for k in range(c):
        pos = labels == k
        out.append(binary_auc(scores[:, k], pos) if 0 < pos.sum() < pos.size else None)
    return out


def per_class_ap(scores, labels, n_classes=None) -> List[Optional[float]]:
    scores, labels, c = _check(scores, labels, n_classes)
    out = []
    for k in range(c):
        pos = labels == k
        out.append(binary_average_precision(scores[:, k], pos) if pos.any() else None)
    return out


def _macro(values: List[Optional[float]]) -> float:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else 0.0


def roc_auc_macro(scores, labels, n_classes=None) -> float:
    return _macro(per_class_auc(scores, labels, n_classes))


def map_macro(scores, labels, n_classes=None) -> float:
    return _macro(per_class_ap(scores, labels, n_classes))


def evaluate(probs, labels) -> EvalResult:
    """All table metrics for class-probability rows ``probs`` (N, C)."""
    probs, labels, c = _check(probs, labels)
    if probs.shape[0] and np.abs(probs.sum(axis=1) - 1.0).max() > 1e-4:
        raise DataError("probability rows must sum to 1 within 1e-4")
    preds = np.argmax(probs, axis=1)
    cm = confusion_matrix(labels, preds, c)
    prec, rec, f1 = per_class_prf(cm)
    acc = float(np.mean(preds == labels)) if labels.size else 0.0
    return EvalResult(
        accuracy=acc,
        precision_macro=float(prec.mean()),
        recall_macro=float(rec.mean()),
        f1_macro=float(f1.mean()),
        auc_macro=roc_auc_macro(probs, labels, c),
        map_macro=map_macro(probs, labels, c),
        confusion=cm,
    )
