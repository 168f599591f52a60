"""Confusion-matrix metrics, one-vs-rest ROC curves with trapezoidal AUC,
and the comparison-table report.

The trapezoidal AUC over the threshold-sweep curve equals the pairwise
ranking statistic P(score+ > score-) + P(tie)/2; tests hold the two within
1e-9.  Undefined 0/0 ratios are reported as 0.0 and flagged rather than
dropped, so table shapes stay stable.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def confusion(labels, predictions, num_classes: int) -> np.ndarray:
    """Counts[true][predicted] over paired label/prediction sequences."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions must have equal length")
    if labels.size and (
        labels.min() < 0
        or labels.max() >= num_classes
        or predictions.min() < 0
        or predictions.max() >= num_classes
    ):
        raise ValueError(f"labels/predictions out of range 0..{num_classes - 1}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


@dataclass
class PerClassMetrics:
    precision: np.ndarray
    sensitivity: np.ndarray
    specificity: np.ndarray
    support: np.ndarray
    undefined: dict[str, np.ndarray]  # 0/0 flags per metric
    weighted_precision: float
    weighted_sensitivity: float
    weighted_specificity: float
    accuracy: float
    balanced_precision: float  # macro-averaged precision


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    undefined = den == 0
    out = np.zeros(len(num), dtype=np.float64)
    ok = ~undefined
    out[ok] = num[ok] / den[ok]
    return out, undefined


def per_class_metrics(cm: np.ndarray) -> PerClassMetrics:
    """One-vs-rest precision/sensitivity/specificity per class plus
    support-weighted averages."""
    cm = np.asarray(cm, dtype=np.int64)
    c = cm.shape[0]
    if cm.shape != (c, c) or (cm < 0).any():
        raise ValueError("confusion matrix must be square and nonnegative")
    total = cm.sum()
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    fn = support - tp
    fp = cm.sum(axis=0) - tp
    tn = total - tp - fn - fp

    precision, p_undef = _safe_ratio(tp, tp + fp)
    sensitivity, s_undef = _safe_ratio(tp, tp + fn)
    specificity, sp_undef = _safe_ratio(tn, tn + fp)

    w = support / total if total else np.zeros(c)
    return PerClassMetrics(
        precision=precision,
        sensitivity=sensitivity,
        specificity=specificity,
        support=support.astype(np.int64),
        undefined={"precision": p_undef, "sensitivity": s_undef, "specificity": sp_undef},
        weighted_precision=float((precision * w).sum()),
        weighted_sensitivity=float((sensitivity * w).sum()),
        weighted_specificity=float((specificity * w).sum()),
        accuracy=float(tp.sum() / total) if total else 0.0,
        balanced_precision=float(precision.mean()),
    )


@dataclass
class RocCurve:
    points: np.ndarray  # (M, 2) columns (fpr, tpr), starts (0,0), ends (1,1)
    thresholds: np.ndarray  # (M,), +inf sentinel for the (0,0) point
    auc: float


def roc_curve(scores, labels) -> RocCurve:
    """Threshold-sweep ROC over binary labels; AUC by the trapezoidal rule."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equal length")
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos + neg != len(labels):
        raise ValueError("labels must be 0 or 1")
    if pos == 0 or neg == 0:
        raise ValueError("need at least one positive and one negative")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp_cum = np.cumsum(sorted_labels)
    fp_cum = np.cumsum(1 - sorted_labels)
    # keep only the last index of each tie group
    distinct = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]
    tpr = np.concatenate([[0.0], tp_cum[distinct] / pos])
    fpr = np.concatenate([[0.0], fp_cum[distinct] / neg])
    thresholds = np.concatenate([[np.inf], sorted_scores[distinct]])

    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(points=np.column_stack([fpr, tpr]), thresholds=thresholds, auc=auc)


def multiclass_auc(score_matrix: np.ndarray, labels) -> tuple[list[float], float]:
    """One-vs-rest AUC per class on score columns, plus the unweighted mean."""
    scores = np.asarray(score_matrix, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or len(scores) != len(labels):
        raise ValueError("score matrix must be (N, C) with one row per label")
    per_class = []
    for c in range(scores.shape[1]):
        binary = (labels == c).astype(np.int64)
        if binary.sum() == 0 or binary.sum() == len(binary):
            raise ValueError(f"class {c} has no positives or no negatives")
        per_class.append(roc_curve(scores[:, c], binary).auc)
    return per_class, float(np.mean(per_class))


def roc_to_csv(curve: RocCurve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "fpr", "tpr"])
    for th, (fpr, tpr) in zip(curve.thresholds, curve.points):
        writer.writerow([repr(float(th)), repr(float(fpr)), repr(float(tpr))])
    return buf.getvalue()


@dataclass
class EvalReport:
    num_classes: int
    total: int
    accuracy: float
    balanced_precision: float
    weighted_precision: float
    weighted_sensitivity: float
    weighted_specificity: float
    per_class: list[dict]
    confusion: list[list[int]]
    per_class_auc: list[float] | None = None
    macro_auc: float | None = None
    roc_curves: list[RocCurve] | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "total": self.total,
            "accuracy": self.accuracy,
            "balanced_precision": self.balanced_precision,
            "weighted_precision": self.weighted_precision,
            "weighted_sensitivity": self.weighted_sensitivity,
            "weighted_specificity": self.weighted_specificity,
            "per_class": self.per_class,
            "confusion": self.confusion,
            "per_class_auc": self.per_class_auc,
            "macro_auc": self.macro_auc,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_json(), encoding="ascii")

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(
            num_classes=d["num_classes"],
            total=d["total"],
            accuracy=d["accuracy"],
            balanced_precision=d["balanced_precision"],
            weighted_precision=d["weighted_precision"],
            weighted_sensitivity=d["weighted_sensitivity"],
            weighted_specificity=d["weighted_specificity"],
            per_class=d["per_class"],
            confusion=d["confusion"],
            per_class_auc=d.get("per_class_auc"),
            macro_auc=d.get("macro_auc"),
        )


def build_report(
    labels, predictions, num_classes: int, score_matrix: np.ndarray | None = None
) -> EvalReport:
    """Full evaluation report; AUC columns require the score matrix."""
    cm = confusion(labels, predictions, num_classes)
    m = per_class_metrics(cm)
    per_class = []
    for c in range(num_classes):
        per_class.append(
            {
                "class_id": c,
                "support": int(m.support[c]),
                "precision": float(m.precision[c]),
                "sensitivity": float(m.sensitivity[c]),
                "specificity": float(m.specificity[c]),
                "undefined": sorted(k for k, v in m.undefined.items() if v[c]),
            }
        )
    report = EvalReport(
        num_classes=num_classes,
        total=int(cm.sum()),
        accuracy=m.accuracy,
        balanced_precision=m.balanced_precision,
        weighted_precision=m.weighted_precision,
        weighted_sensitivity=m.weighted_sensitivity,
        weighted_specificity=m.weighted_specificity,
        per_class=per_class,
        confusion=[[int(v) for v in row] for row in cm],
    )
    if score_matrix is not None:
        labels = np.asarray(labels, dtype=np.int64)
        per_auc, macro = multiclass_auc(score_matrix, labels)
        report.per_class_auc = [float(a) for a in per_auc]
        report.macro_auc = macro
        report.roc_curves = [
            roc_curve(np.asarray(score_matrix)[:, c], (labels == c).astype(np.int64))
            for c in range(num_classes)
        ]
        for c, a in enumerate(per_auc):
            report.per_class[c]["auc"] = float(a)
    return report


def render_per_class_table(report: EvalReport) -> str:
    """Plain-text per-class table (precision / sensitivity / specificity)."""
    lines = ["class  precision  sensitivity  specificity"]
    for row in report.per_class:
        lines.append(
            f"{row['class_id']:>5}  {row['precision']:>9.2f}  "
            f"{row['sensitivity']:>11.2f}  {row['specificity']:>11.2f}"
        )
    lines.append(
        f"w_avg  {report.weighted_precision:>9.2f}  "
        f"{report.weighted_sensitivity:>11.2f}  {report.weighted_specificity:>11.2f}"
    )
    return "\n".join(lines) + "\n"


@dataclass
class ComparisonRow:
    name: str
    accuracy: float
    balanced_precision: float
    specificity: float


def compare_report(
    model_report: EvalReport,
    annotator_reports: list[EvalReport],
    model_name: str = "model",
    annotators_name: str = "annotators",
) -> list[ComparisonRow]:
    """Comparison rows (accuracy, balanced precision, specificity): the mean
    of the annotators, then the model."""
    for r in annotator_reports:
        if r.num_classes != model_report.num_classes:
            raise ValueError("annotator report class count differs from model report")
    rows = []
    if annotator_reports:
        rows.append(
            ComparisonRow(
                name=annotators_name,
                accuracy=float(np.mean([r.accuracy for r in annotator_reports])),
                balanced_precision=float(
                    np.mean([r.balanced_precision for r in annotator_reports])
                ),
                specificity=float(
                    np.mean([r.weighted_specificity for r in annotator_reports])
                ),
            )
        )
    rows.append(
        ComparisonRow(
            name=model_name,
            accuracy=model_report.accuracy,
            balanced_precision=model_report.balanced_precision,
            specificity=model_report.weighted_specificity,
        )
    )
    return rows


def comparison_to_csv(rows: list[ComparisonRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "accuracy", "balanced_precision", "specificity"])
    for r in rows:
        writer.writerow(
            [r.name, f"{r.accuracy:.2f}", f"{r.balanced_precision:.2f}", f"{r.specificity:.2f}"]
        )
    return buf.getvalue()
