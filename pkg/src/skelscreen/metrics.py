"""Labeling and screening metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EvalError


@dataclass(frozen=True, eq=False)
class EvalResult:
    confusion: np.ndarray  # rows = truth, columns = prediction
    accuracy: float
    macro_sensitivity: float
    macro_precision: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_sensitivity": self.macro_sensitivity,
            "macro_precision": self.macro_precision,
            "n": int(self.confusion.sum()),
        }


@dataclass(frozen=True)
class ScreeningMetrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def accuracy(self) -> float:
        n = self.tp + self.fp + self.tn + self.fn
        return (self.tp + self.tn) / n if n else 0.0

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "sensitivity": self.sensitivity, "precision": self.precision, "accuracy": self.accuracy}


def confusion_matrix(truth, pred, n_classes: int) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def from_confusion(cm: np.ndarray) -> EvalResult:
    """Accuracy and macro sensitivity / precision of a confusion matrix.

    Classes that occur neither in the truth nor in the predictions are left
    out of the macro means; a class predicted but never true (or the reverse)
    contributes 0 to the undefined ratio.
    """
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise EvalError("empty confusion matrix")
    tp = np.diag(cm).astype(float)
    true_n = cm.sum(axis=1).astype(float)
    pred_n = cm.sum(axis=0).astype(float)
    present = (true_n > 0) | (pred_n > 0)
    sens = np.divide(tp, true_n, out=np.zeros_like(tp), where=true_n > 0)
    prec = np.divide(tp, pred_n, out=np.zeros_like(tp), where=pred_n > 0)
    return EvalResult(cm, float(tp.sum() / total), float(sens[present].mean()), float(prec[present].mean()))


def evaluate_labels(truth, pred, n_classes: int) -> EvalResult:
    if len(truth) != len(pred):
        raise EvalError(f"prediction/truth length mismatch: {len(pred)} vs {len(truth)}")
    if len(truth) == 0:
        raise EvalError("nothing to evaluate")
    return from_confusion(confusion_matrix(truth, pred, n_classes))


def evaluate_screening(truth_verdicts, pred_verdicts, positive: str = "Abnormal") -> ScreeningMetrics:
    if len(truth_verdicts) != len(pred_verdicts):
        raise EvalError(f"verdict length mismatch: {len(pred_verdicts)} vs {len(truth_verdicts)}")
    if len(truth_verdicts) == 0:
        raise EvalError("nothing to evaluate")
    t = np.array([v == positive for v in truth_verdicts])
    p = np.array([v == positive for v in pred_verdicts])
    return ScreeningMetrics(int((t & p).sum()), int((~t & p).sum()), int((~t & ~p).sum()), int((t & ~p).sum()))
