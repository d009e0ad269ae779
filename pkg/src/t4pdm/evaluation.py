"""Confusion matrix, per-class/macro metrics, one-vs-rest AUCs and report rendering.

Per-class accuracy is (TP + TN) / total; every "Average" value is the
unweighted mean over classes. Metric values are fractions in [0, 1]; the text
renderer prints them as percentages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

METRICS = ("f1", "precision", "recall", "accuracy")
REPORT_KEYS = ("confusion", "per_class", "macro", "auc_roc", "auc_prc", "metadata")


class MetricsError(ValueError):
    pass


@dataclass(eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # [C, C]; rows true class, columns predicted class
    class_labels: list[str]

    def __eq__(self, other):
        return (isinstance(other, ConfusionMatrix) and self.class_labels == other.class_labels
                and np.array_equal(self.counts, other.counts))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {"labels": list(self.class_labels), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConfusionMatrix":
        return cls(np.asarray(d["counts"], dtype=np.int64), list(d["labels"]))


def confusion_matrix(true_labels, predicted_labels, n_classes: int,
                     class_labels: list[str] | None = None) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise MetricsError(f"length mismatch: {t.size} true vs {p.size} predicted labels")
    if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= n_classes):
        raise MetricsError(f"label out of range [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    labels = class_labels if class_labels is not None else [str(i) for i in range(n_classes)]
    if len(labels) != n_classes:
        raise MetricsError("class_labels length does not match n_classes")
    return ConfusionMatrix(counts, list(labels))


def _ratio(num: float, den: float) -> tuple[float, bool]:
    return (float(num / den), False) if den > 0 else (0.0, True)


def classification_metrics(cm: ConfusionMatrix) -> tuple[dict[str, dict[str, float]], dict[str, float], list[str]]:
    """Per-class and macro precision/recall/F1/accuracy.

    Returns (per_class, macro, flags). A zero denominator yields 0 and adds a
    flag naming the class and metric.
    """
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if c.size == 0 or total <= 0:
        raise MetricsError("empty confusion matrix")
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    tn = total - tp - fp - fn
    per_class: dict[str, dict[str, float]] = {}
    flags: list[str] = []
    for i, name in enumerate(cm.class_labels):
        prec, f1_p = _ratio(tp[i], tp[i] + fp[i])
        rec, f1_r = _ratio(tp[i], tp[i] + fn[i])
        f1, f1_f = _ratio(2 * prec * rec, prec + rec)
        if f1_p:
            flags.append(f"precision undefined for class {name!r} (never predicted)")
        if f1_r:
            flags.append(f"recall undefined for class {name!r} (no true samples)")
        if f1_f and not (f1_p or f1_r):
            flags.append(f"f1 undefined for class {name!r} (precision + recall = 0)")
        per_class[name] = {"f1": f1, "precision": prec, "recall": rec,
                           "accuracy": float((tp[i] + tn[i]) / total)}
    macro = {k: float(np.mean([v[k] for v in per_class.values()])) for k in METRICS}
    return per_class, macro, flags


def micro_accuracy(cm: ConfusionMatrix) -> float:
    return float(np.trace(cm.counts) / cm.total)


def _binary_curve(scores: np.ndarray, positive: np.ndarray):
    """Cumulative (TP, FP) at each distinct score threshold, descending."""
    order = np.argsort(-scores, kind="mergesort")
    s, pos = scores[order], positive[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]  # last index of each tie group
    tp = np.cumsum(pos)[last]
    fp = np.cumsum(~pos)[last]
    return tp.astype(np.float64), fp.astype(np.float64)


def binary_auc_roc(scores, positive) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos, n_neg = positive.sum(), (~positive).sum()
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("ROC needs both positive and negative samples")
    tp, fp = _binary_curve(scores, positive)
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    # trapezoids; a tie group contributes a diagonal segment, i.e. half credit
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def binary_auc_prc(scores, positive) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = positive.sum()
    if n_pos == 0:
        raise MetricsError("PR curve needs at least one positive sample")
    tp, fp = _binary_curve(scores, positive)
    precision = tp / (tp + fp)
    recall = np.r_[0.0, tp / n_pos]
    # right-step interpolation: each recall increment is credited at the precision reached there
    return float(np.sum(np.diff(recall) * precision))


def _one_vs_rest(fn, scores, true_labels, need_negatives: bool, class_labels=None):
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(true_labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != y.size:
        raise MetricsError("scores must be [n_samples, n_classes] matching true_labels")
    names = class_labels or [str(i) for i in range(scores.shape[1])]
    vals, flags = [], []
    for c in range(scores.shape[1]):
        pos = y == c
        if not pos.any():
            flags.append(f"class {names[c]!r} absent from true labels; skipped")
            continue
        if need_negatives and pos.all():
            flags.append(f"class {names[c]!r} has no negatives; skipped")
            continue
        vals.append(fn(scores[:, c], pos))
    if not vals:
        return None, flags
    return float(np.mean(vals)), flags


def auc_roc(scores, true_labels, class_labels=None) -> tuple[float | None, list[str]]:
    """Macro one-vs-rest ROC AUC and the list of skipped-class flags."""
    return _one_vs_rest(binary_auc_roc, scores, true_labels, True, class_labels)


def auc_prc(scores, true_labels, class_labels=None) -> tuple[float | None, list[str]]:
    """Macro one-vs-rest area under the precision-recall curve."""
    return _one_vs_rest(binary_auc_prc, scores, true_labels, False, class_labels)


# -- reports ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    per_class: dict[str, dict[str, float]]
    macro: dict[str, float]
    auc_roc: float | None
    auc_prc: float | None
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"confusion": self.confusion.to_dict(), "per_class": self.per_class, "macro": self.macro,
                "auc_roc": self.auc_roc, "auc_prc": self.auc_prc, "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        missing = [k for k in REPORT_KEYS if k not in d]
        if missing:
            raise MetricsError(f"report is missing keys {missing}")
        return cls(ConfusionMatrix.from_dict(d["confusion"]), d["per_class"], d["macro"],
                   d["auc_roc"], d["auc_prc"], d["metadata"])


def evaluate(true_labels, probs, class_labels: list[str], metadata: dict | None = None) -> EvalReport:
    probs = np.asarray(probs, dtype=np.float64)
    pred = np.argmax(probs, axis=1)
    cm = confusion_matrix(true_labels, pred, len(class_labels), class_labels)
    per_class, macro, flags = classification_metrics(cm)
    roc, roc_flags = auc_roc(probs, true_labels, class_labels)
    prc, prc_flags = auc_prc(probs, true_labels, class_labels)
    meta = dict(metadata or {})
    meta["averaging"] = "macro (unweighted mean over classes); AUCs one-vs-rest"
    meta["micro_accuracy"] = micro_accuracy(cm)
    meta["flags"] = flags + roc_flags + prc_flags
    return EvalReport(cm, per_class, macro, roc, prc, meta)


def _pct(v: float | None) -> str:
    return "n/a" if v is None else f"{100 * v:.2f}%"


def render_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def parse_json(text: str) -> EvalReport:
    return EvalReport.from_dict(json.loads(text))


def render_text(report: EvalReport) -> str:
    names = report.confusion.class_labels
    w = max(len("Classes"), len("Average"), *(len(n) for n in names)) + 2
    head = "Classes".ljust(w) + "".join(h.rjust(11) for h in ("F1", "Precision", "Recall", "Accuracy"))
    lines = [head, "-" * len(head)]
    for name in names:
        row = report.per_class[name]
        lines.append(name.ljust(w) + "".join(_pct(row[k]).rjust(11) for k in METRICS))
    lines.append("Average".ljust(w) + "".join(_pct(report.macro[k]).rjust(11) for k in METRICS))
    lines += ["", f"AUC ROC: {_pct(report.auc_roc)}", f"AUC PRC: {_pct(report.auc_prc)}", "",
              "Confusion matrix (rows = true, columns = predicted):"]
    cw = max(6, *(len(n) for n in names)) + 1
    lines.append(" " * w + "".join(n.rjust(cw) for n in names))
    for name, row in zip(names, report.confusion.counts):
        lines.append(name.ljust(w) + "".join(str(int(v)).rjust(cw) for v in row))
    return "\n".join(lines) + "\n"


ABLATION_COLUMNS = ("f1", "auc_roc", "auc_prc", "recall", "precision", "accuracy")


def ablation_row(no: int, title: str, report: EvalReport, convergence_epoch: int | None) -> dict:
    return {"no": no, "configuration": title, "f1": report.macro["f1"], "auc_roc": report.auc_roc,
            "auc_prc": report.auc_prc, "recall": report.macro["recall"],
            "precision": report.macro["precision"], "accuracy": report.macro["accuracy"],
            "convergence_epoch": convergence_epoch}


def render_ablation_text(rows: list[dict]) -> str:
    w = max(len("Experiment Configuration"), *(len(r["configuration"]) for r in rows)) + 2
    titles = ("F1-Score", "AUC ROC", "AUC PRC", "Recall", "Precision", "Accuracy")
    head = "No.  " + "Experiment Configuration".ljust(w) + "".join(t.rjust(11) for t in titles) + "  Conv. epoch"
    lines = [head, "-" * len(head)]
    for r in rows:
        conv = "-" if r["convergence_epoch"] is None else str(r["convergence_epoch"])
        lines.append(f"{r['no']:<5}" + r["configuration"].ljust(w)
                     + "".join(_pct(r[k]).rjust(11) for k in ABLATION_COLUMNS) + conv.rjust(13))
    return "\n".join(lines) + "\n"
