"""Domain types for electrogram signals and labelled datasets."""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .errors import InvalidLabel, InvalidSignal, UnassignedPatient

CANONICAL_SAMPLING_RATE = 1000.0  # Hz, 1 sample per ms
SPECTRUM_LENGTH = 1500


class Label(str, Enum):
    """Three-way EGM category. Declaration order is the confusion-matrix index order."""

    NORMAL = "normal"
    ABNORMAL = "abnormal"
    UNCLASSIFIED = "unclassified"

    @property
    def index(self) -> int:
        return LABEL_ORDER.index(self)

    @classmethod
    def from_index(cls, index: int) -> "Label":
        if not 0 <= int(index) < len(LABEL_ORDER):
            raise InvalidLabel(f"Label index must be 0, 1 or 2, got {index}")
        return LABEL_ORDER[int(index)]

    @classmethod
    def parse(cls, value: str) -> "Label":
        try:
            return cls(str(value).lower())
        except ValueError as e:
            raise InvalidLabel(f"Unknown label {value!r}") from e


LABEL_ORDER: Tuple[Label, ...] = (Label.NORMAL, Label.ABNORMAL, Label.UNCLASSIFIED)


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "val"
    TEST = "test"


@dataclass(frozen=True, eq=False)
class EgmSignal:
    """One bipolar EGM recording.

    Samples are stored as a read-only float64 array in mV.
    """

    signal_id: str
    patient_id: str
    sampling_rate: float
    samples: np.ndarray
    cycle_length_ms: float

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=np.float64).ravel()
        if samples.size == 0:
            raise InvalidSignal(f"Signal {self.signal_id} has no samples")
        if not np.all(np.isfinite(samples)):
            raise InvalidSignal(f"Signal {self.signal_id} contains non-finite samples")
        if self.sampling_rate <= 0:
            raise InvalidSignal(f"Signal {self.signal_id}: sampling_rate must be positive")
        if self.cycle_length_ms <= 0:
            raise InvalidSignal(f"Signal {self.signal_id}: cycle_length_ms must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_ms(self) -> float:
        return len(self) * 1000.0 / self.sampling_rate

    @property
    def cycle_length_samples(self) -> int:
        return int(round(self.cycle_length_ms * self.sampling_rate / 1000.0))

    def with_samples(self, samples: np.ndarray) -> "EgmSignal":
        """Copy of this signal with new samples and unchanged metadata."""
        return replace(self, samples=samples)


@dataclass(frozen=True)
class LabeledSignal:
    signal: EgmSignal
    label: Optional[Label] = None
    annotator_labels: Optional[Tuple[Label, ...]] = None

    def __post_init__(self) -> None:
        if self.annotator_labels is not None:
            object.__setattr__(self, "annotator_labels", tuple(self.annotator_labels))
            distinct = set(self.annotator_labels)
            if self.label is not None and len(distinct) == 1 and self.label not in distinct:
                raise InvalidLabel(
                    f"Signal {self.signal.signal_id}: label {self.label.value} disagrees with unanimous annotators"
                )

    @property
    def signal_id(self) -> str:
        return self.signal.signal_id

    @property
    def patient_id(self) -> str:
        return self.signal.patient_id


@dataclass(frozen=True)
class Spectrum:
    """Power spectrum over exactly 1500 discrete frequencies (mV² · samples²)."""

    power: np.ndarray

    def __post_init__(self) -> None:
        power = np.asarray(self.power, dtype=np.float64)
        if power.shape != (SPECTRUM_LENGTH,):
            raise InvalidSignal(f"Spectrum must have {SPECTRUM_LENGTH} bins, got shape {power.shape}")
        if np.any(power < 0):
            raise InvalidSignal("Spectrum power must be nonnegative")
        object.__setattr__(self, "power", power)


@dataclass(frozen=True)
class Dataset:
    """Labelled records plus the patient-level split they belong to."""

    records: Tuple[LabeledSignal, ...] = ()
    split_assignment: Dict[str, Split] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "split_assignment", {k: Split(v) for k, v in self.split_assignment.items()})
        for record in self.records:
            if record.patient_id not in self.split_assignment:
                raise UnassignedPatient(f"Patient {record.patient_id} has no split assignment")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def patient_ids(self) -> List[str]:
        return sorted(self.split_assignment)

    def records_in(self, *splits: Split) -> List[LabeledSignal]:
        wanted = set(splits)
        return [r for r in self.records if self.split_assignment[r.patient_id] in wanted]

    def subset(self, *splits: Split) -> "Dataset":
        wanted = set(splits)
        assignment = {pid: s for pid, s in self.split_assignment.items() if s in wanted}
        return Dataset(records=tuple(self.records_in(*splits)), split_assignment=assignment)

    def labels(self) -> List[Optional[Label]]:
        return [r.label for r in self.records]

    @classmethod
    def from_records(cls, records: Iterable[LabeledSignal], split: Split) -> "Dataset":
        records = tuple(records)
        return cls(records=records, split_assignment={r.patient_id: split for r in records})
