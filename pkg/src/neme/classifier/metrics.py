"""Confusion-matrix metrics for behaviour classification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import LABELS, NUM_CLASSES


@dataclass(frozen=True)
class ClassificationReport:
    """Metrics derived from a K x K confusion matrix (rows true, columns predicted).

    ``absent[k]`` marks classes with no true and no predicted windows; their
    F1 is 0 and they still count in :attr:`macro_f1`.  :attr:`macro_f1_present`
    averages over the remaining classes only.
    """

    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    absent: np.ndarray

    @classmethod
    def from_confusion(cls, confusion) -> "ClassificationReport":
        cm = np.asarray(confusion, dtype=np.int64)
        if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
            raise ValueError("confusion matrix must be square")
        tp = np.diag(cm).astype(np.float64)
        pred = cm.sum(axis=0).astype(np.float64)
        true = cm.sum(axis=1).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            precision = np.where(pred > 0, tp / pred, 0.0)
            recall = np.where(true > 0, tp / true, 0.0)
            denom = precision + recall
            f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
        absent = (pred == 0) & (true == 0)
        return cls(cm, precision, recall, f1, absent)

    @classmethod
    def from_predictions(cls, y_true, y_pred, K: int = NUM_CLASSES) -> "ClassificationReport":
        cm = np.zeros((K, K), dtype=np.int64)
        np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
        return cls.from_confusion(cm)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.total) if self.total else 0.0

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean())

    @property
    def macro_f1_present(self) -> float:
        present = ~self.absent
        return float(self.f1[present].mean()) if present.any() else 0.0

    def summary(self) -> str:
        names = [lab.value for lab in LABELS] if len(self.f1) == NUM_CLASSES else [str(i) for i in range(len(self.f1))]
        lines = [f"accuracy {self.accuracy:.4f}  macro F1 {self.macro_f1:.4f}  (n={self.total})"]
        for k, name in enumerate(names):
            flag = "  [absent]" if self.absent[k] else ""
            lines.append(f"  {name:<11} P {self.precision[k]:.3f}  R {self.recall[k]:.3f}  F1 {self.f1[k]:.3f}{flag}")
        return "\n".join(lines)
