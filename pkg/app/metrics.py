"""Confusion matrices, one-vs-all precision/recall/F1 and their rendering."""

import csv
import io
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .errors import EmptyInput, EmptyMatrix, InvalidLabel, LengthMismatch
from .signals import LABEL_ORDER, Label, LabeledSignal

FORMATS = ("text", "csv", "json")
CSV_COLUMNS = ["class", "precision", "recall", "f1", "support", "undefined"]
_COLUMN = 14


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """3x3 counts; rows are true labels and columns predicted labels, in ``LABEL_ORDER``."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.int64)
        if counts.shape != (3, 3):
            raise ValueError(f"Confusion matrix must be 3x3, got shape {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("Confusion matrix counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConfusionMatrix) and bool(np.array_equal(self.counts, other.counts))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    @property
    def supports(self) -> List[int]:
        return [int(v) for v in self.counts.sum(axis=1)]

    @property
    def prediction_counts(self) -> List[int]:
        return [int(v) for v in self.counts.sum(axis=0)]

    def to_lists(self) -> List[List[int]]:
        return [[int(v) for v in row] for row in self.counts]


class ClassMetrics(BaseModel):
    label: Label
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    f1: float = Field(..., ge=0, le=1)
    support: int = Field(..., ge=0)
    undefined: List[str] = Field(default_factory=list, description="Metrics whose denominator was zero")


class MetricsReport(BaseModel):
    classes: List[ClassMetrics]
    accuracy: float = Field(..., ge=0, le=1)
    total: int = Field(..., gt=0)

    def for_label(self, label: Label) -> ClassMetrics:
        return self.classes[label.index]


@dataclass(frozen=True)
class Misclassified:
    signal_id: str
    truth: Label
    pred: Label


def confusion(truth: Sequence[Label], pred: Sequence[Label]) -> ConfusionMatrix:
    """
    Raises:
        LengthMismatch: if the sequences differ in length
        EmptyInput: if there is nothing to count
        InvalidLabel: if a truth value is missing
    """
    if len(truth) != len(pred):
        raise LengthMismatch(f"{len(truth)} true labels but {len(pred)} predictions")
    if not truth:
        raise EmptyInput("Cannot build a confusion matrix from no labels")
    counts = np.zeros((3, 3), dtype=np.int64)
    for t, p in zip(truth, pred):
        if t is None or p is None:
            raise InvalidLabel("Confusion matrix inputs must all be labelled")
        counts[Label(t).index, Label(p).index] += 1
    return ConfusionMatrix(counts)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """One-vs-all metrics per class.

    A zero denominator gives the value 0 and lists the metric under ``undefined``.

    Raises:
        EmptyMatrix: if the matrix holds no counts
    """
    if cm.total == 0:
        raise EmptyMatrix("Confusion matrix is empty")
    counts = cm.counts
    classes = []
    for label in LABEL_ORDER:
        c = label.index
        tp = int(counts[c, c])
        predicted = int(counts[:, c].sum())
        actual = int(counts[c, :].sum())
        undefined = []
        if predicted:
            precision = tp / predicted
        else:
            precision = 0.0
            undefined.append("precision")
        if actual:
            recall = tp / actual
        else:
            recall = 0.0
            undefined.append("recall")
        if undefined:
            f1 = 0.0
            undefined.append("f1")
        else:
            # harmonic mean of precision and recall, kept in integer counts until the last division
            f1 = 2 * tp / (predicted + actual)
        classes.append(
            ClassMetrics(label=label, precision=precision, recall=recall, f1=f1, support=actual, undefined=undefined)
        )
    return MetricsReport(classes=classes, accuracy=cm.trace / cm.total, total=cm.total)


def round_half_away(value: float, places: int = 2) -> Decimal:
    """Round for display; halves move away from zero (0.625 -> 0.63)."""
    quantum = Decimal(1).scaleb(-places)
    return Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP)


def _display_name(label: Label) -> str:
    return label.value.capitalize()


def _render_text(cm: ConfusionMatrix, report: MetricsReport) -> str:
    w = _COLUMN
    names = [_display_name(label) for label in LABEL_ORDER]
    lines = ["Confusion matrix (rows: label, columns: prediction)"]
    lines.append(f"{'Label':<{w}}" + "".join(f"{name:>{w}}" for name in names))
    for name, row in zip(names, cm.to_lists()):
        lines.append(f"{name:<{w}}" + "".join(f"{count:>{w}d}" for count in row))
    lines.append("")
    lines.append("Performance (one-vs-all)")
    lines.append(f"{'Class':<{w}}{'Precision':>{w}}{'Recall':>{w}}{'F1':>{w}}{'Support':>{w}}")
    any_undefined = False
    for name, entry in zip(names, report.classes):
        cells = []
        for metric in ("precision", "recall", "f1"):
            cell = str(round_half_away(getattr(entry, metric)))
            if metric in entry.undefined:
                cell += "*"
                any_undefined = True
            cells.append(cell)
        lines.append(f"{name:<{w}}" + "".join(f"{cell:>{w}}" for cell in cells) + f"{entry.support:>{w}d}")
    lines.append("")
    lines.append(f"{'Accuracy':<{w}}{str(round_half_away(report.accuracy)):>{w}}")
    lines.append(f"{'Total':<{w}}{report.total:>{w}d}")
    if any_undefined:
        lines.append("* undefined (zero denominator), reported as 0")
    return "\n".join(lines) + "\n"


def _render_csv(report: MetricsReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for entry in report.classes:
        writer.writerow(
            [
                entry.label.value,
                repr(entry.precision),
                repr(entry.recall),
                repr(entry.f1),
                entry.support,
                ";".join(entry.undefined),
            ]
        )
    writer.writerow(["accuracy", repr(report.accuracy), "", "", report.total, ""])
    return buffer.getvalue()


def _render_json(cm: ConfusionMatrix, report: MetricsReport) -> str:
    payload = {
        "labels": [label.value for label in LABEL_ORDER],
        "confusion_matrix": cm.to_lists(),
        "report": report.model_dump(mode="json"),
    }
    return json.dumps(payload, indent=2) + "\n"


def render(cm: ConfusionMatrix, report: MetricsReport, fmt: str = "text") -> str:
    if fmt == "text":
        return _render_text(cm, report)
    if fmt == "csv":
        return _render_csv(report)
    if fmt == "json":
        return _render_json(cm, report)
    raise ValueError(f"Unknown format {fmt!r}; expected one of {', '.join(FORMATS)}")


def parse_json(document: str) -> Tuple[ConfusionMatrix, MetricsReport]:
    """Inverse of ``render(..., "json")``."""
    payload = json.loads(document)
    return ConfusionMatrix(payload["confusion_matrix"]), MetricsReport.model_validate(payload["report"])


def parse_csv(document: str) -> MetricsReport:
    """Inverse of ``render(..., "csv")``."""
    rows = list(csv.DictReader(io.StringIO(document)))
    classes = [
        ClassMetrics(
            label=Label.parse(row["class"]),
            precision=float(row["precision"]),
            recall=float(row["recall"]),
            f1=float(row["f1"]),
            support=int(row["support"]),
            undefined=[name for name in row["undefined"].split(";") if name],
        )
        for row in rows
        if row["class"] != "accuracy"
    ]
    accuracy_row = next(row for row in rows if row["class"] == "accuracy")
    return MetricsReport(classes=classes, accuracy=float(accuracy_row["precision"]), total=int(accuracy_row["support"]))


def misclassified_dump(records: Sequence[LabeledSignal], predictions: Sequence[Label]) -> List[Misclassified]:
    """Records whose prediction differs from their label, sorted by signal id.

    Raises:
        LengthMismatch: if records and predictions are not aligned
    """
    if len(records) != len(predictions):
        raise LengthMismatch(f"{len(records)} records but {len(predictions)} predictions")
    wrong = [
        Misclassified(record.signal_id, record.label, Label(pred))
        for record, pred in zip(records, predictions)
        if record.label != pred
    ]
    return sorted(wrong, key=lambda m: m.signal_id)


def evaluate(records: Sequence[LabeledSignal], predictions: Sequence[Label]) -> Tuple[ConfusionMatrix, MetricsReport]:
    cm = confusion([r.label for r in records], list(predictions))
    return cm, metrics(cm)
