"""Confusion matrices, per-class one-vs-rest metrics and report rendering.

Per-class metrics, in percent:

    SE        = TP / (TP + FN)
    SP        = TN / (TN + FP)
    ACC       = (TP + TN) / N
    Precision = TP / (TP + FP)
    F1        = 2 SE Precision / (SE + Precision)
    Kappa     = 2 (TN TP - FP FN) / ((TN + FN)(FN + TP) + (FP + TP)(TN + FP))

A metric whose denominator is zero is reported as 0 and its name is listed in
the row's ``degenerate`` field. Values keep full precision; rounding to two
decimals happens only when rendering.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from ssnet.errors import ClassOutOfRange, EmptyCounts, LengthMismatch, NotFiveClass

COLUMNS = ("ACC", "SE", "SP", "F1", "Kappa")
REM_INDEX = 4


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # [true, predicted]
    class_names: tuple

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricsRow:
    name: str
    se: float
    sp: float
    acc: float
    precision: float
    f1: float
    kappa: float
    degenerate: tuple = field(default=())

    def values(self) -> dict:
        return {"ACC": self.acc, "SE": self.se, "SP": self.sp, "Precision": self.precision, "F1": self.f1, "Kappa": self.kappa}


def confusion(preds, labels, n_classes: int, class_names=None) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} predictions for {len(labels)} labels")
    for arr, what in ((preds, "prediction"), (labels, "label")):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ClassOutOfRange(f"{what} values must lie in [0, {n_classes})")
    counts = np.bincount(labels * n_classes + preds, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    names = tuple(class_names) if class_names is not None else tuple(str(c) for c in range(n_classes))
    return ConfusionMatrix(counts, names)


def one_vs_rest(cm: ConfusionMatrix, c: int) -> ConfusionCounts:
    if not 0 <= c < cm.n_classes:
        raise ClassOutOfRange(f"class {c} not in [0, {cm.n_classes})")
    counts = cm.counts
    tp = int(counts[c, c])
    fn = int(counts[c].sum()) - tp
    fp = int(counts[:, c].sum()) - tp
    return ConfusionCounts(tp, cm.total - tp - fp - fn, fp, fn)


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return 100.0 * num / den


def class_metrics(cc: ConfusionCounts, name: str = "") -> MetricsRow:
    if cc.n == 0:
        raise EmptyCounts("no epochs to score")
    tp, tn, fp, fn = cc.tp, cc.tn, cc.fp, cc.fn
    flags = []
    se = _ratio(tp, tp + fn, "SE", flags)
    sp = _ratio(tn, tn + fp, "SP", flags)
    acc = 100.0 * (tp + tn) / cc.n
    precision = _ratio(tp, tp + fp, "Precision", flags)
    # with TP > 0, 2 SE P / (SE + P) reduces to 2TP / (2TP + FP + FN); with
    # TP = 0, SE + P is zero or undefined
    f1 = _ratio(2 * tp, 2 * tp + fp + fn, "F1", flags) if tp else _ratio(0, 0, "F1", flags)
    kappa = 2.0 * _ratio(tn * tp - fp * fn, (tn + fn) * (fn + tp) + (fp + tp) * (tn + fp), "Kappa", flags)
    return MetricsRow(name, se, sp, acc, precision, f1, kappa, tuple(flags))


def macro_average(rows, name: str = "Average") -> MetricsRow:
    rows = list(rows)
    if not rows:
        raise EmptyCounts("macro average of no rows")
    mean = {k: float(np.mean([getattr(r, k) for r in rows])) for k in ("se", "sp", "acc", "precision", "f1", "kappa")}
    flags = tuple(sorted({f"{r.name}:{f}" for r in rows for f in r.degenerate}))
    return MetricsRow(name, degenerate=flags, **mean)


def per_class_rows(cm: ConfusionMatrix) -> list[MetricsRow]:
    return [class_metrics(one_vs_rest(cm, c), cm.class_names[c]) for c in range(cm.n_classes)]


def kappa_multiclass(cm: ConfusionMatrix) -> float:
    """Cohen's kappa over the full matrix, in percent (reported alongside, never in the tables)."""
    n = cm.total
    if n == 0:
        raise EmptyCounts("no epochs to score")
    counts = cm.counts.astype(np.float64)
    po = np.trace(counts) / n
    pe = float(counts.sum(axis=1) @ counts.sum(axis=0)) / (n * n)
    return 0.0 if pe == 1.0 else 100.0 * (po - pe) / (1.0 - pe)


def rem_detection_summary(cm: ConfusionMatrix) -> dict:
    """Precision and recall (SE) of the REM class of a five-class matrix."""
    if cm.n_classes != 5:
        raise NotFiveClass(f"REM summary needs a five-class matrix, got {cm.n_classes} classes")
    row = class_metrics(one_vs_rest(cm, REM_INDEX), cm.class_names[REM_INDEX])
    return {"precision": row.precision, "recall": row.se, "degenerate": [f for f in row.degenerate if f in ("Precision", "SE")]}


def build_report(cm: ConfusionMatrix) -> tuple[list[MetricsRow], MetricsRow]:
    rows = per_class_rows(cm)
    return rows, macro_average(rows)


# rendering


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_report(cm: ConfusionMatrix, rows, fmt: str = "table") -> str:
    """Serialize per-class rows (plus a trailing Average row) and the matrix.

    ``rows`` must hold one row per class followed by the average row.
    """
    rows = list(rows)
    if len(rows) != cm.n_classes + 1:
        raise ValueError(f"expected {cm.n_classes} class rows plus an average row, got {len(rows)}")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("Class",) + COLUMNS)
        for r in rows:
            w.writerow([r.name] + [_fmt(r.values()[c]) for c in COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        doc = {
            "class_names": list(cm.class_names),
            "confusion": cm.counts.tolist(),
            "rows": [
                {"Class": r.name, **{k: v for k, v in r.values().items()}, "degenerate": list(r.degenerate)} for r in rows
            ],
            "kappa_multiclass": kappa_multiclass(cm) if cm.total else 0.0,
            "n_epochs": cm.total,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if fmt == "table":
        width = max(7, max(len(r.name) for r in rows))
        head = f"{'Class':<{width}}" + "".join(f"{c:>9}" for c in COLUMNS)
        lines = [head, "-" * len(head)]
        for r in rows:
            lines.append(f"{r.name:<{width}}" + "".join(f"{_fmt(r.values()[c]):>9}" for c in COLUMNS))
        lines.append("")
        lines.append("Confusion matrix (rows = true, columns = predicted)")
        cw = max(6, max(len(n) for n in cm.class_names) + 1, len(str(cm.counts.max() if cm.counts.size else 0)) + 1)
        lines.append(" " * width + "".join(f"{n:>{cw}}" for n in cm.class_names))
        for name, row in zip(cm.class_names, cm.counts):
            lines.append(f"{name:<{width}}" + "".join(f"{int(v):>{cw}}" for v in row))
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def render_confusion_csv(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred"] + list(cm.class_names))
    for name, row in zip(cm.class_names, cm.counts):
        w.writerow([name] + [int(v) for v in row])
    return buf.getvalue()


def report_from_json(text: str) -> tuple[ConfusionMatrix, list[MetricsRow]]:
    doc = json.loads(text)
    cm = ConfusionMatrix(np.array(doc["confusion"], dtype=np.int64), tuple(doc["class_names"]))
    rows = [
        MetricsRow(
            r["Class"], r["SE"], r["SP"], r["ACC"], r["Precision"], r["F1"], r["Kappa"], tuple(r.get("degenerate", ()))
        )
        for r in doc["rows"]
    ]
    return cm, rows
