"""
Confusion matrices, per-class metrics, ROC curves and the per-species report table
"""

import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np
import pandas as pd
from sklearn import metrics as skm

from mushroomnet.errors import DataError, ShapeError

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ('id', 'class', 'identified', 'correct', 'accuracy', 'threat_score', 'correct_over_identified',
                  'precision', 'f1', 'recall')


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """counts[i][j] = samples of true class i predicted as j"""
    counts: np.ndarray
    names: tuple = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got {counts.shape}")
        if not np.issubdtype(counts.dtype, np.integer) or np.any(counts < 0):
            raise DataError("confusion matrix counts must be non-negative integers")
        object.__setattr__(self, 'counts', counts.astype(np.int64))
        names = tuple(self.names) if self.names is not None else tuple(f'class_{i}' for i in range(len(counts)))
        if len(names) != len(counts):
            raise ShapeError(f"{len(names)} class names for a {len(counts)}-class confusion matrix")
        object.__setattr__(self, 'names', names)

    @property
    def k(self):
        return len(self.counts)

    @property
    def total(self):
        return int(self.counts.sum())

    @classmethod
    def from_predictions(cls, labels, predictions, k, names=None):
        counts = skm.confusion_matrix(np.asarray(labels), np.asarray(predictions), labels=list(range(k)))
        return cls(counts, names)

    def to_frame(self):
        return pd.DataFrame(self.counts, index=list(self.names), columns=list(self.names))

    def to_csv(self, path):
        self.to_frame().to_csv(path, index_label='true\\predicted')
        logger.info("wrote confusion matrix %s", path)


@dataclass(frozen=True)
class ClassMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    threat_score: float
    correct_over_identified: float
    # names of the ratios that hit a zero denominator and were reported as 0
    flags: tuple = ()


def per_class_counts(cm, c):
    """One-vs-rest (TP, FP, FN, TN) for class c"""
    counts = cm.counts
    tp = int(counts[c, c])
    fp = int(counts[:, c].sum()) - tp
    fn = int(counts[c, :].sum()) - tp
    tn = cm.total - tp - fp - fn
    return tp, fp, fn, tn


def _ratio(numerator, denominator, name, flags):
    if denominator == 0:
        flags.append(name)
        return Fraction(0)
    return Fraction(numerator, denominator)


def metrics(cm, c):
    """Accuracy, precision, recall and F1 of class c as exact fractions rendered to float"""
    tp, fp, fn, tn = per_class_counts(cm, c)
    flags = []
    values = dict(
        accuracy=_ratio(tp + tn, tp + tn + fp + fn, 'accuracy', flags),
        precision=_ratio(tp, tp + fp, 'precision', flags),
        recall=_ratio(tp, tp + fn, 'recall', flags),
        f1=_ratio(2 * tp, 2 * tp + fp + fn, 'f1', flags),
        threat_score=_ratio(tp, tp + fp + fn, 'threat_score', flags),
        correct_over_identified=_ratio(tp, tp + fn, 'correct_over_identified', flags),
    )
    return ClassMetrics(**{key: float(value) for key, value in values.items()}, flags=tuple(flags))


def threat_score(cm, c):
    tp, fp, fn, _ = per_class_counts(cm, c)
    return tp / (tp + fp + fn) if tp + fp + fn else 0.0


def overall_accuracy(cm):
    return float(np.trace(cm.counts)) / cm.total if cm.total else 0.0


def percent(value):
    """Percentage string rounded half-up to two decimals"""
    return str((Decimal(repr(float(value))) * 100).quantize(Decimal('0.01'), rounding=ROUND_HALF_UP))


# ─── ROC ───────────────────────────────────────────────────────────────────
def roc_curve(scores, labels, c):
    """One-vs-rest (fpr, tpr) points for class c over every distinct score threshold"""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] != len(labels):
        raise ShapeError(f"scores must be [N,k] matching {len(labels)} labels, got {scores.shape}")
    positive = labels == c
    if not positive.any():
        raise DataError(f"class {c} does not occur in the labels; ROC is undefined")
    if positive.all():
        raise DataError(f"class {c} is the only class in the labels; ROC is undefined")
    fpr, tpr, _ = skm.roc_curve(positive.astype(int), scores[:, c], drop_intermediate=False)
    return list(zip(fpr.tolist(), tpr.tolist()))


def auc(points):
    """Trapezoid area under (fpr, tpr) points"""
    if len(points) < 2:
        raise DataError("AUC needs at least two curve points")
    fpr, tpr = (np.asarray(v) for v in zip(*points))
    return float(skm.auc(fpr, tpr))


def macro_auc(scores, labels):
    """Mean one-vs-rest AUC over classes present in the labels"""
    k = np.asarray(scores).shape[1]
    present = [c for c in range(k) if np.any(np.asarray(labels) == c)]
    return float(np.mean([auc(roc_curve(scores, labels, c)) for c in present]))


def roc_frame(scores, labels, names=None):
    """Long-format ROC points of every class present, for external plotting"""
    rows = []
    k = np.asarray(scores).shape[1]
    for c in range(k):
        if not np.any(np.asarray(labels) == c):
            continue
        for fpr, tpr in roc_curve(scores, labels, c):
            rows.append({'class': names[c] if names else c, 'fpr': fpr, 'tpr': tpr})
    return pd.DataFrame(rows, columns=['class', 'fpr', 'tpr'])


# ─── Report ────────────────────────────────────────────────────────────────
def report_table(cm, names=None):
    """Per-class rows plus a totals row; percentages rounded half-up to 2 d.p."""
    names = tuple(names) if names is not None else cm.names
    rows = []
    for c in range(cm.k):
        tp, _, fn, _ = per_class_counts(cm, c)
        m = metrics(cm, c)
        rows.append({
            'id': str(c + 1), 'class': names[c], 'identified': tp + fn, 'correct': tp,
            'accuracy': percent(m.accuracy), 'threat_score': percent(m.threat_score),
            'correct_over_identified': percent(m.correct_over_identified),
            'precision': percent(m.precision), 'f1': percent(m.f1), 'recall': percent(m.recall),
        })
        if m.flags:
            logger.warning("class %s: undefined %s reported as 0", names[c], ', '.join(m.flags))
    # micro averages coincide with overall accuracy for single-label data
    overall = percent(overall_accuracy(cm))
    rows.append({'id': '-', 'class': '-', 'identified': cm.total, 'correct': int(np.trace(cm.counts)),
                 **{key: overall for key in REPORT_COLUMNS[4:]}})
    return pd.DataFrame(rows, columns=list(REPORT_COLUMNS))


def write_report(cm, path, names=None):
    report_table(cm, names).to_csv(path, index=False)
    logger.info("wrote metrics table %s", path)
