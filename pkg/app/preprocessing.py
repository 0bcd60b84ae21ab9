"""Signal preprocessing shared by the rule classifier and the network.

All functions are pure: inputs are never mutated and randomness comes from an
explicitly passed ``numpy.random.Generator``.
"""

from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .errors import (
    AllZeroSignal,
    MissingAnnotations,
    OverlappingSplit,
    SignalTooShort,
    UnassignedPatient,
    WrongLength,
)
from .signals import CANONICAL_SAMPLING_RATE, SPECTRUM_LENGTH, Dataset, EgmSignal, LabeledSignal, Spectrum, Split


def rectify(signal: EgmSignal) -> EgmSignal:
    return signal.with_samples(np.abs(signal.samples))


def normalize(signal: EgmSignal) -> EgmSignal:
    """Scale so the maximum absolute amplitude is exactly one.

    Raises:
        AllZeroSignal: if every sample is zero
    """
    peak = float(np.max(np.abs(signal.samples)))
    if peak == 0.0:
        raise AllZeroSignal(f"Cannot normalise all-zero signal {signal.signal_id}")
    return signal.with_samples(signal.samples / peak)


def window_samples(window_ms: float, sampling_rate: float) -> int:
    return int(round(window_ms * sampling_rate / 1000.0))


def random_crop(signal: EgmSignal, window_ms: float, rng: np.random.Generator) -> EgmSignal:
    """Cut a contiguous window whose start is uniform over all valid positions."""
    width = window_samples(window_ms, signal.sampling_rate)
    if width <= 0:
        raise ValueError("window_ms must be positive")
    if len(signal) < width:
        raise SignalTooShort(
            f"Signal {signal.signal_id} lasts {signal.duration_ms:.0f} ms, shorter than the {window_ms:.0f} ms window"
        )
    start = int(rng.integers(0, len(signal) - width + 1))
    return signal.with_samples(signal.samples[start : start + width])


def center_crop(signal: EgmSignal, window_ms: float) -> EgmSignal:
    """Deterministic crop used for validation and test inputs."""
    width = window_samples(window_ms, signal.sampling_rate)
    if len(signal) < width:
        raise SignalTooShort(
            f"Signal {signal.signal_id} lasts {signal.duration_ms:.0f} ms, shorter than the {window_ms:.0f} ms window"
        )
    start = (len(signal) - width) // 2
    return signal.with_samples(signal.samples[start : start + width])


def resample(signal: EgmSignal, target_rate: float = CANONICAL_SAMPLING_RATE) -> EgmSignal:
    """Linear-interpolation resampling onto the canonical 1 kHz grid."""
    if signal.sampling_rate == target_rate:
        return signal
    n_out = max(1, int(round(len(signal) * target_rate / signal.sampling_rate)))
    source_t = np.arange(len(signal)) / signal.sampling_rate
    target_t = np.arange(n_out) / target_rate
    samples = np.interp(target_t, source_t, signal.samples)
    return EgmSignal(
        signal_id=signal.signal_id,
        patient_id=signal.patient_id,
        sampling_rate=target_rate,
        samples=samples,
        cycle_length_ms=signal.cycle_length_ms,
    )


def power_spectrum(samples: Sequence[float]) -> Spectrum:
    """Squared-magnitude DFT over 1500 bins, without log scaling or normalisation.

    Raises:
        WrongLength: if the input does not have exactly 1500 samples
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.shape != (SPECTRUM_LENGTH,):
        raise WrongLength(f"Power spectrum needs exactly {SPECTRUM_LENGTH} samples, got {x.size}")
    transform = np.fft.fft(x)
    return Spectrum(power=transform.real**2 + transform.imag**2)


def split_by_patient(
    dataset: Dataset, train_ids: Iterable[str], val_ids: Iterable[str], test_ids: Iterable[str]
) -> Tuple[Dataset, Dataset, Dataset]:
    """Partition a dataset by patient into train / validation / test datasets.

    Raises:
        OverlappingSplit: if a patient is listed in more than one id set
        UnassignedPatient: if a patient in the dataset is in none of the id sets
    """
    id_sets = {Split.TRAIN: set(train_ids), Split.VALIDATION: set(val_ids), Split.TEST: set(test_ids)}
    seen = {}
    for split, ids in id_sets.items():
        for pid in sorted(ids):
            if pid in seen:
                raise OverlappingSplit(f"Patient {pid} listed in both {seen[pid].value} and {split.value}")
            seen[pid] = split

    patients = set(dataset.split_assignment) | {r.patient_id for r in dataset.records}
    missing = sorted(patients - set(seen))
    if missing:
        raise UnassignedPatient(f"Patients without a split: {', '.join(missing)}")

    outputs = []
    for split, ids in id_sets.items():
        records = tuple(r for r in dataset.records if r.patient_id in ids)
        outputs.append(Dataset(records=records, split_assignment={pid: split for pid in ids}))
    return outputs[0], outputs[1], outputs[2]


def unanimous_filter(records: Sequence[LabeledSignal]) -> List[LabeledSignal]:
    """Keep only records whose annotators all agree, labelled with that common value.

    Raises:
        MissingAnnotations: if a record carries no annotator labels
    """
    kept = []
    for record in records:
        if not record.annotator_labels:
            raise MissingAnnotations(f"Signal {record.signal_id} has no annotator labels")
        distinct = set(record.annotator_labels)
        if len(distinct) == 1:
            kept.append(LabeledSignal(record.signal, distinct.pop(), record.annotator_labels))
    return kept
