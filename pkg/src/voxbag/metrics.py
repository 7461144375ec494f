"""Binary-classification evaluation with SCZ (label 1) as the positive class."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import DataError

METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "precision", "recall", "f1", "gmean")
TABLE_HEADERS = ("Accuracy", "Sensitivity", "Specificity", "Precision", "Recall", "F-measure", "G-mean")
REPORT_COLUMNS = ("classifier",) + METRIC_NAMES


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise DataError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    sensitivity: float
    specificity: float
    precision: float
    recall: float
    f1: float
    gmean: float
    degenerate: tuple = ()

    def values(self) -> tuple:
        return tuple(getattr(self, name) for name in METRIC_NAMES)


def confusion(predictions, labels, positive_class: int = 1) -> ConfusionMatrix:
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    if pred.shape != lab.shape or pred.ndim != 1:
        raise DataError(f"predictions {pred.shape} and labels {lab.shape} must be equal-length vectors")
    if len(lab) == 0:
        raise DataError("cannot build a confusion matrix from no samples")
    if not np.isin(lab, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    pos_p = pred == positive_class
    pos_l = lab == positive_class
    return ConfusionMatrix(
        tp=int(np.sum(pos_p & pos_l)),
        fp=int(np.sum(pos_p & ~pos_l)),
        fn=int(np.sum(~pos_p & pos_l)),
        tn=int(np.sum(~pos_p & ~pos_l)),
    )


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def f1_score(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def gmean(sensitivity: float, specificity: float) -> float:
    return math.sqrt(sensitivity * specificity)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """The seven scalar metrics; a zero denominator yields 0 and a flag."""
    if cm.total == 0:
        raise DataError("confusion matrix is empty")
    flags: list = []
    acc = (cm.tp + cm.tn) / cm.total
    sens = _ratio(cm.tp, cm.tp + cm.fn, "sensitivity", flags)
    spec = _ratio(cm.tn, cm.tn + cm.fp, "specificity", flags)
    prec = _ratio(cm.tp, cm.tp + cm.fp, "precision", flags)
    if prec + sens == 0:
        flags.append("f1")
    return MetricsReport(
        accuracy=acc, sensitivity=sens, specificity=spec, precision=prec, recall=sens,
        f1=f1_score(prec, sens), gmean=gmean(sens, spec), degenerate=tuple(flags),
    )


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def roc_curve(scores, labels) -> RocCurve:
    """ROC over the distinct scores, highest first, preceded by a +inf threshold.

    A prediction is positive when its score is >= the threshold. AUC is
    the trapezoidal area under the points.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise DataError("scores and labels must be equal-length vectors")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != len(y):
        raise DataError("ROC needs labels in {0, 1} with both classes present")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    tp = np.cumsum(y_sorted == 1)
    fp = np.cumsum(y_sorted == 0)
    # last occurrence of each distinct score
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tpr = np.r_[0.0, tp[ends] / n_pos]
    fpr = np.r_[0.0, fp[ends] / n_neg]
    thr = np.r_[np.inf, s_sorted[ends]]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thr, auc)


def percent(value: float) -> str:
    """Percentage with two decimals, halves rounded away from zero."""
    return str(Decimal(repr(value * 100)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _fraction(value: float) -> str:
    return f"{value:.6f}"


def render_report(reports, rocs=None) -> tuple[str, str, str]:
    """Render named reports as ``(text_table, json_text, csv_text)``.

    ``reports`` is a sequence of ``(name, MetricsReport)``; ``rocs`` an
    optional mapping from the same names to :class:`RocCurve`. JSON and CSV
    carry the same six-decimal fractions.
    """
    reports = list(reports)
    if not reports:
        raise DataError("render_report needs at least one report")
    rocs = rocs or {}
    name_w = max(len("Classifier"), *(len(n) for n, _ in reports))
    lines = [" | ".join(["Classifier".ljust(name_w), *TABLE_HEADERS])]
    lines.append("-" * len(lines[0]))
    for name, rep in reports:
        cells = [percent(v).rjust(len(h)) for v, h in zip(rep.values(), TABLE_HEADERS)]
        lines.append(" | ".join([name.ljust(name_w), *cells]))
    text = "\n".join(lines) + "\n"

    records = []
    for name, rep in reports:
        rec = {"classifier": name}
        rec.update({k: float(_fraction(v)) for k, v in zip(METRIC_NAMES, rep.values())})
        if name in rocs:
            rec["auc"] = float(_fraction(rocs[name].auc))
        if rep.degenerate:
            rec["degenerate"] = list(rep.degenerate)
        records.append(rec)
    json_text = json.dumps(records, indent=2, sort_keys=False) + "\n"

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for name, rep in reports:
        writer.writerow([name, *(_fraction(v) for v in rep.values())])
    return text, json_text, buf.getvalue()


def roc_csv(roc: RocCurve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("fpr", "tpr", "threshold"))
    for f, t, th in roc.points:
        writer.writerow((f"{f:.6f}", f"{t:.6f}", "inf" if math.isinf(th) else f"{th:.6f}"))
    return buf.getvalue()
