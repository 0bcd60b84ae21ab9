"""JSON Lines dataset files: one signal record per line."""

import json
import logging
import os
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import DatasetIOError, InvalidSignal, OverlappingSplit
from .preprocessing import resample
from .signals import Dataset, EgmSignal, Label, LabeledSignal, Split

logger = logging.getLogger(__name__)

SPLIT_FILES = {Split.TRAIN: "train.jsonl", Split.VALIDATION: "val.jsonl", Split.TEST: "test.jsonl"}


class SignalRecord(BaseModel):
    """Wire format of one dataset line. Field names are exact and lowercase."""

    model_config = ConfigDict(extra="forbid")

    signal_id: str = Field(..., description="Opaque signal identifier")
    patient_id: str = Field(..., description="Opaque patient identifier")
    sampling_rate_hz: float = Field(..., gt=0, description="Samples per second")
    cycle_length_ms: float = Field(..., gt=0, description="Patient ECG cycle length")
    samples: List[float] = Field(..., min_length=1, description="Voltage samples in mV")
    label: Optional[Label] = Field(None, description="Ground-truth or unanimous label")
    annotator_labels: Optional[List[Label]] = Field(None, description="Per-annotator labels")

    def to_labeled_signal(self) -> LabeledSignal:
        signal = EgmSignal(
            signal_id=self.signal_id,
            patient_id=self.patient_id,
            sampling_rate=self.sampling_rate_hz,
            samples=self.samples,
            cycle_length_ms=self.cycle_length_ms,
        )
        return LabeledSignal(
            signal=resample(signal),
            label=self.label,
            annotator_labels=tuple(self.annotator_labels) if self.annotator_labels is not None else None,
        )

    @classmethod
    def from_labeled_signal(cls, record: LabeledSignal) -> "SignalRecord":
        signal = record.signal
        return cls(
            signal_id=signal.signal_id,
            patient_id=signal.patient_id,
            sampling_rate_hz=signal.sampling_rate,
            cycle_length_ms=signal.cycle_length_ms,
            samples=signal.samples.tolist(),
            label=record.label,
            annotator_labels=list(record.annotator_labels) if record.annotator_labels is not None else None,
        )


def read_jsonl(path: os.PathLike) -> List[LabeledSignal]:
    """Read a dataset file, resampling any non-1 kHz record onto the canonical grid."""
    path = Path(path)
    records = []
    try:
        with path.open() as f:
            for line_number, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    records.append(SignalRecord.model_validate_json(line).to_labeled_signal())
                except (ValidationError, InvalidSignal) as e:
                    raise DatasetIOError(f"{path}:{line_number}: invalid record: {e}") from e
    except OSError as e:
        raise DatasetIOError(f"Cannot read dataset file {path}: {e}") from e
    return records


def write_jsonl(records: Iterable[LabeledSignal], path: os.PathLike) -> int:
    path = Path(path)
    count = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as f:
            for record in records:
                f.write(SignalRecord.from_labeled_signal(record).model_dump_json(exclude_none=False))
                f.write("\n")
                count += 1
    except OSError as e:
        raise DatasetIOError(f"Cannot write dataset file {path}: {e}") from e
    return count


def load_dataset(directory: os.PathLike) -> Dataset:
    """Load train/val/test files from a dataset directory; missing split files are empty."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetIOError(f"Dataset directory {directory} does not exist")
    records: List[LabeledSignal] = []
    assignment: Dict[str, Split] = {}
    for split, filename in SPLIT_FILES.items():
        path = directory / filename
        if not path.exists():
            logger.debug("No %s split at %s", split.value, path)
            continue
        split_records = read_jsonl(path)
        for record in split_records:
            previous = assignment.setdefault(record.patient_id, split)
            if previous != split:
                raise OverlappingSplit(
                    f"Patient {record.patient_id} appears in both {previous.value} and {split.value}"
                )
        records.extend(split_records)
    if not records:
        raise DatasetIOError(f"No records found under {directory}")
    return Dataset(records=tuple(records), split_assignment=assignment)


def save_dataset(dataset: Dataset, directory: os.PathLike) -> Dict[str, int]:
    directory = Path(directory)
    counts = {}
    for split, filename in SPLIT_FILES.items():
        counts[split.value] = write_jsonl(dataset.records_in(split), directory / filename)
    return counts


def write_json(payload: dict, path: os.PathLike) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")
    except OSError as e:
        raise DatasetIOError(f"Cannot write {path}: {e}") from e


class PredictionRecord(BaseModel):
    """One line of ``predictions.jsonl``."""

    model_config = ConfigDict(extra="forbid")

    signal_id: str = Field(..., description="Signal the prediction belongs to")
    patient_id: str = Field(..., description="Patient of the signal")
    label: Optional[Label] = Field(None, description="Ground truth, when known")
    prediction: Label = Field(..., description="Predicted label")


def write_predictions(records: Iterable[LabeledSignal], predictions: Iterable[Label], path: os.PathLike) -> int:
    path = Path(path)
    count = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as f:
            for record, prediction in zip(records, predictions):
                line = PredictionRecord(
                    signal_id=record.signal_id, patient_id=record.patient_id, label=record.label, prediction=prediction
                )
                f.write(line.model_dump_json() + "\n")
                count += 1
    except OSError as e:
        raise DatasetIOError(f"Cannot write predictions {path}: {e}") from e
    return count


def read_predictions(path: os.PathLike) -> List[PredictionRecord]:
    path = Path(path)
    try:
        lines = [line for line in path.read_text().splitlines() if line.strip()]
    except OSError as e:
        raise DatasetIOError(f"Cannot read predictions {path}: {e}") from e
    try:
        return [PredictionRecord.model_validate_json(line) for line in lines]
    except ValidationError as e:
        raise DatasetIOError(f"{path}: invalid prediction record: {e}") from e
