"""Accuracy, macro one-vs-rest AUC, confusion matrices and table-style reports."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionError, MetricError

log = logging.getLogger(__name__)

MODE_LABELS = {
    "full": "Diff-E",
    "no_ddpm": "w/o DDPM",
    "encoder_classifier": "w/o DDPM & decoder",
}


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"accuracy: {pred.shape} predictions vs {truth.shape} labels")
    if pred.size == 0:
        raise MetricError("accuracy of an empty set is undefined")
    return float(np.mean(pred == truth))


def binary_auc(scores, positive) -> float:
    """ROC AUC via the rank-sum statistic; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def multiclass_auc(scores, truth, n_classes: int | None = None) -> float:
    """Unweighted mean over classes of the one-vs-rest AUC of each score column."""
    scores = np.asarray(scores)
    truth = np.asarray(truth)
    if scores.ndim != 2 or scores.shape[0] != truth.shape[0]:
        raise DimensionError(f"multiclass_auc: scores {scores.shape} vs {truth.shape[0]} labels")
    n_classes = n_classes or scores.shape[1]
    if scores.shape[1] != n_classes:
        raise DimensionError(f"multiclass_auc: expected {n_classes} score columns, got {scores.shape[1]}")
    per_class = []
    for k in range(n_classes):
        pos = truth == k
        if not pos.any():
            raise MetricError(f"class {k} is absent from the labels; its AUC is undefined")
        per_class.append(binary_auc(scores[:, k], pos))
    return float(np.mean(per_class))


def confusion_matrix(pred, truth, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth), np.asarray(pred)), 1)
    return cm


def predict_from_scores(scores) -> np.ndarray:
    # argmax already returns the first maximum, i.e. the lowest class index on ties
    return np.asarray(scores).argmax(axis=1)


@dataclass
class RunMetrics:
    """Test-set metrics of one run (fractions, not percent)."""

    mode: str
    accuracy: float
    auc: float
    confusion: np.ndarray
    subject: int = 1
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_scores(cls, mode: str, scores, truth, n_classes: int, lenient: bool = False,
                    **kw) -> "RunMetrics":
        """Score a run; with ``lenient`` an undefined AUC (class missing from ``truth``) becomes NaN."""
        pred = predict_from_scores(scores)
        try:
            auc = multiclass_auc(scores, truth, n_classes)
        except MetricError as exc:
            if not lenient:
                raise
            log.warning("AUC undefined: %s", exc)
            auc = float("nan")
        return cls(mode, accuracy(pred, truth), auc, confusion_matrix(pred, truth, n_classes), **kw)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "subject": self.subject, "accuracy": self.accuracy,
                "auc": self.auc, "confusion": self.confusion.tolist(), **self.extra}


@dataclass
class MetricsReport:
    """Rows of mean +- sample-std accuracy and AUC in percent, one per mode."""

    rows: list[dict]
    runs: list[RunMetrics]

    def text(self, title: str = "") -> str:
        head = f"{'Components':<22}{'Accuracy (%)':>18}{'AUC (%)':>18}"
        rule = "-" * len(head)
        lines = [title] if title else []
        lines += [rule, head, rule]
        for r in self.rows:
            lines.append(f"{r['label']:<22}{r['accuracy_fmt']:>18}{r['auc_fmt']:>18}")
        lines.append(rule)
        return "\n".join(lines)

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "label", "n_runs", "accuracy_mean", "accuracy_std", "auc_mean", "auc_std"])
        for r in self.rows:
            w.writerow([r["mode"], r["label"], r["n_runs"], f"{r['accuracy_mean']:.4f}",
                        f"{r['accuracy_std']:.4f}", f"{r['auc_mean']:.4f}", f"{r['auc_std']:.4f}"])
        return buf.getvalue()


def mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def format_pm(values) -> str:
    m, s = mean_std(values)
    return f"{m:.2f} ± {s:.2f}"


def report(results: list[RunMetrics]) -> MetricsReport:
    """Aggregate runs per mode (in first-seen order) into table rows."""
    if not results:
        raise MetricError("report needs at least one run")
    order: list[str] = []
    for r in results:
        if r.mode not in order:
            order.append(r.mode)
    rows = []
    for mode in order:
        runs = [r for r in results if r.mode == mode]
        acc = [100 * r.accuracy for r in runs]
        auc = [100 * r.auc for r in runs]
        am, asd = mean_std(acc)
        um, usd = mean_std(auc)
        rows.append({
            "mode": mode, "label": MODE_LABELS.get(mode, mode), "n_runs": len(runs),
            "accuracy_mean": am, "accuracy_std": asd, "auc_mean": um, "auc_std": usd,
            "accuracy_fmt": format_pm(acc), "auc_fmt": format_pm(auc),
        })
    return MetricsReport(rows, list(results))
