"""Classification metrics over one-hot, multi-class outputs.

Precision, recall and the confusion-matrix accuracy are micro-averaged:
every (sample, class) pair is one binary decision, positive when the
class probability reaches the threshold. AUC pools the same pairs and
ranks them by score.
"""
import warnings
from dataclasses import dataclass

import numpy as np


class MetricWarning(UserWarning):
    """A metric fell back to 0 because its denominator was 0."""


class UndefinedAucError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    auc: float
    categorical_accuracy: float = float("nan")
    loss: float = float("nan")


def _stack(probs, targets):
    probs = [np.asarray(p, dtype=np.float64) for p in probs]
    targets = [np.asarray(t, dtype=np.float64) for t in targets]
    if len(probs) != len(targets):
        raise ValueError(f"{len(probs)} predictions but {len(targets)} targets")
    if not probs:
        return np.zeros((0, 0)), np.zeros((0, 0))
    p, y = np.stack(probs), np.stack(targets)
    if p.shape != y.shape:
        raise ValueError(f"prediction shape {p.shape} != target shape {y.shape}")
    return p, y


def confusion_counts(probs, targets, threshold=0.5):
    p, y = _stack(probs, targets)
    pred = p >= threshold
    pos = y > 0.5
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _ratio(num, den, name):
    if den == 0:
        warnings.warn(f"{name} undefined (zero denominator); reporting 0", MetricWarning,
                      stacklevel=3)
        return 0.0
    return num / den


def classification_metrics(c):
    """``(accuracy, precision, recall)`` from confusion counts."""
    accuracy = _ratio(c.tp + c.tn, c.total, "accuracy")
    precision = _ratio(c.tp, c.tp + c.fp, "precision")
    recall = _ratio(c.tp, c.tp + c.fn, "recall")
    return accuracy, precision, recall


def roc_auc(probs, targets):
    """Micro-averaged area under the ROC curve.

    Scores are sorted in descending order and each group of tied scores
    is one threshold step, so ties contribute half a concordant pair.
    """
    p, y = _stack(probs, targets)
    return binary_auc(p.ravel(), y.ravel() > 0.5)


def binary_auc(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError(
            f"AUC needs both classes; got {n_pos} positives and {n_neg} negatives"
        )
    order = np.argsort(-scores, kind="stable")
    s, lab = scores[order], labels[order]
    # last index of each tie group
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(lab)[ends].astype(np.float64)
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def categorical_accuracy(probs, targets):
    """Fraction of samples whose arg-max class matches the one-hot target."""
    p, y = _stack(probs, targets)
    if p.size == 0:
        return 0.0
    return float(np.mean(np.argmax(p, axis=1) == np.argmax(y, axis=1)))


def evaluate(probs, targets, loss=float("nan"), threshold=0.5):
    """All metrics in one :class:`MetricReport`."""
    counts = confusion_counts(probs, targets, threshold)
    accuracy, precision, recall = classification_metrics(counts)
    try:
        auc = roc_auc(probs, targets)
    except UndefinedAucError:
        auc = float("nan")
    return MetricReport(accuracy, precision, recall, auc,
                        categorical_accuracy(probs, targets), float(loss))
