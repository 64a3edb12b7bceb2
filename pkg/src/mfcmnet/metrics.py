"""Binary classification metrics. The positive class is "fake" (label 1).

Two F1 variants are reported: f1_standard = 2PR/(P+R) and f1_paper =
PR/(P+R). Zero-denominator cases yield None (the undefined marker),
never NaN.
"""

from __future__ import annotations

from dataclasses import dataclass


class LengthMismatch(Exception):
    pass


class EmptyInput(Exception):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError(f"counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class Metrics:
    accuracy: float | None
    precision: float | None
    recall: float | None
    f1_standard: float | None
    f1_paper: float | None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1_standard": self.f1_standard,
            "f1_paper": self.f1_paper,
        }


def confusion(predictions, labels) -> ConfusionMatrix:
    """Count tp/tn/fp/fn over paired {0,1} sequences; 1 means fake."""
    preds = list(predictions)
    labs = list(labels)
    if len(preds) != len(labs):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(labs)} labels")
    if not preds:
        raise EmptyInput("no samples to score")
    tp = tn = fp = fn = 0
    for p, y in zip(preds, labs):
        if p not in (0, 1) or y not in (0, 1):
            raise ValueError(f"predictions and labels must be 0 or 1, got ({p}, {y})")
        if p == 1 and y == 1:
            tp += 1
        elif p == 0 and y == 0:
            tn += 1
        elif p == 1 and y == 0:
            fp += 1
        else:
            fn += 1
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


def metrics_from_confusion(cm: ConfusionMatrix) -> Metrics:
    if cm.total == 0:
        raise EmptyInput("confusion matrix is empty")
    accuracy = (cm.tp + cm.tn) / cm.total
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp > 0 else None
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn > 0 else None
    f1_standard = f1_paper = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1_standard = 2 * precision * recall / (precision + recall)
        f1_paper = precision * recall / (precision + recall)
    return Metrics(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1_standard=f1_standard,
        f1_paper=f1_paper,
    )
