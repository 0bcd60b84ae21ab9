"""Synthetic EGM cohorts standing in for clinical recordings.

Waveforms are phenomenological templates. Their constants are picked so that a
noiseless signal of each class is a fixed point of the rule classifier with its
default parameters, which turns the generator into a labelled oracle corpus.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .signals import CANONICAL_SAMPLING_RATE, LABEL_ORDER, Dataset, EgmSignal, Label, LabeledSignal, Split

logger = logging.getLogger(__name__)

MIN_CYCLE_LENGTH_MS = 200.0
# Samples kept free at the start of every signal before the first activation.
LEAD_IN = 10
# Longest activation complex any generator stamps (abnormal main spike plus its burst).
MAX_COMPLEX = 80

NORMAL_UNDERSHOOT = 0.04
BUMP_WIDTH = 6
BURST_GAP = 3
BURST_SPACING = 8
FRACTIONATION_RANGE = (0.11, 0.14)
STRAY_RANGE = (0.25, 0.50)
WEAK_ACTIVITY_RANGE = (0.02, 0.035)
# Samples whose clean value is below this fraction of the activation amplitude count as baseline.
BASELINE_FRAC = 0.01


class GeneratorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, description="Root seed; every patient and signal derives its own stream from it")
    n_patients: int = Field(9, ge=1, description="Number of synthetic patients")
    signals_per_patient: int = Field(160, ge=1, description="Signals generated per patient")
    cycle_length_mean_ms: float = Field(606.0, gt=0, description="Mean patient cycle length")
    cycle_length_sd_ms: float = Field(227.0, ge=0, description="Spread of patient cycle lengths")
    duration_ms: float = Field(4000.0, ge=3000.0, description="Signal duration, at least two crop windows")
    noise_sd: float = Field(0.02, ge=0, description="Baseline noise sd as a fraction of activation amplitude")
    class_mix: Tuple[float, float, float] = Field(
        (326.0, 215.0, 279.0), description="Relative weights of normal, abnormal and unclassified signals"
    )
    split_counts: Optional[Tuple[int, int, int]] = Field(
        None, description="Patients per train/val/test split, in patient order; default n-2/1/1"
    )

    @model_validator(mode="after")
    def _check(self) -> "GeneratorConfig":
        if any(w < 0 for w in self.class_mix) or sum(self.class_mix) <= 0:
            raise ValueError("class_mix weights must be nonnegative with a positive sum")
        if self.split_counts is None:
            if self.n_patients < 3:
                raise ValueError("n_patients must be at least 3 unless split_counts is given")
        elif any(c < 0 for c in self.split_counts) or sum(self.split_counts) != self.n_patients:
            raise ValueError("split_counts must be nonnegative and sum to n_patients")
        shortest = max(MIN_CYCLE_LENGTH_MS, self.cycle_length_mean_ms - 2 * self.cycle_length_sd_ms)
        if shortest > self.longest_cycle_length_ms:
            raise ValueError(
                f"cycle lengths from {shortest:.0f} ms leave no room for three activations in {self.duration_ms:.0f} ms"
            )
        return self

    @property
    def longest_cycle_length_ms(self) -> float:
        return (self.duration_ms - LEAD_IN - MAX_COMPLEX) / 3.0

    @property
    def cycle_length_bounds(self) -> Tuple[float, float]:
        """Clamp range for patient cycle lengths.

        The upper bound also keeps at least three activation complexes inside one signal.
        """
        low = max(MIN_CYCLE_LENGTH_MS, self.cycle_length_mean_ms - 2 * self.cycle_length_sd_ms)
        high = max(low, min(self.cycle_length_mean_ms + 2 * self.cycle_length_sd_ms, self.longest_cycle_length_ms))
        return low, high

    @property
    def resolved_split_counts(self) -> Tuple[int, int, int]:
        if self.split_counts is not None:
            return self.split_counts
        return self.n_patients - 2, 1, 1


@dataclass(frozen=True)
class PatientProfile:
    """Everything shared by the signals of one patient."""

    patient_id: str
    cycle_length_ms: float
    amplitude_scale: float
    spike_width_ms: int
    fractionated_width_ms: int
    duration_ms: float
    noise_sd: float

    def __post_init__(self) -> None:
        if self.cycle_length_ms <= 0:
            raise ValueError("cycle_length_ms must be positive")
        if self.amplitude_scale <= 0:
            raise ValueError("amplitude_scale must be positive")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_ms * CANONICAL_SAMPLING_RATE / 1000.0))

    @property
    def cycle_length_samples(self) -> int:
        return int(round(self.cycle_length_ms * CANONICAL_SAMPLING_RATE / 1000.0))


def patient_id_for(index: int) -> str:
    return f"P{index + 1:02d}"


def make_profile(config: GeneratorConfig, patient_index: int) -> PatientProfile:
    rng = np.random.default_rng([config.seed, 0, patient_index])
    low, high = config.cycle_length_bounds
    cycle_length = float(np.clip(rng.normal(config.cycle_length_mean_ms, config.cycle_length_sd_ms), low, high))
    return PatientProfile(
        patient_id=patient_id_for(patient_index),
        # whole milliseconds so the stored cycle length matches the sample grid exactly
        cycle_length_ms=float(round(cycle_length)),
        amplitude_scale=float(rng.uniform(0.5, 2.0)),
        spike_width_ms=int(rng.integers(22, 39)),
        fractionated_width_ms=int(rng.integers(12, 21)),
        duration_ms=config.duration_ms,
        noise_sd=config.noise_sd,
    )


def _biphasic_spike(width: int) -> np.ndarray:
    """Unit main lobe followed by a shallow undershoot; exactly one sample equals 1.0."""
    main = 2 * max(int(round(0.3 * width)), 2)
    tail = max(width - main, 3)
    lobe = np.sin(np.pi * np.arange(1, main) / main)
    undershoot = -NORMAL_UNDERSHOOT * np.sin(np.pi * np.arange(1, tail) / tail)
    return np.concatenate((lobe, [0.0], undershoot))


def _bump(width: int = BUMP_WIDTH) -> np.ndarray:
    return np.sin(np.pi * np.arange(1, width) / width)


def _stamp(samples: np.ndarray, template: np.ndarray, start: int, scale: float) -> None:
    samples[start : start + template.size] += scale * template


def _activation_starts(profile: PatientProfile, rng: np.random.Generator, complex_length: int) -> np.ndarray:
    cycle = profile.cycle_length_samples
    phase = int(rng.integers(LEAD_IN, LEAD_IN + cycle))
    starts = np.arange(phase, profile.n_samples - complex_length + 1, cycle)
    if starts.size < 3:
        # profile bounds guarantee room for three complexes from the earliest phase
        starts = np.arange(LEAD_IN, profile.n_samples - complex_length + 1, cycle)
    return starts


def _add_baseline_noise(
    clean: np.ndarray, amplitude: float, noise_sd: float, rng: np.random.Generator
) -> np.ndarray:
    noise = rng.normal(0.0, noise_sd * amplitude, clean.size)
    baseline = np.abs(clean) < BASELINE_FRAC * amplitude
    return clean + noise * baseline


def _signal(profile: PatientProfile, samples: np.ndarray, signal_id: str) -> EgmSignal:
    return EgmSignal(
        signal_id=signal_id,
        patient_id=profile.patient_id,
        sampling_rate=CANONICAL_SAMPLING_RATE,
        samples=samples,
        cycle_length_ms=profile.cycle_length_ms,
    )


def gen_normal(profile: PatientProfile, rng: np.random.Generator, signal_id: str = "normal") -> EgmSignal:
    """Periodic biphasic spike train with a quiet baseline between activations."""
    width = int(np.clip(profile.spike_width_ms + rng.integers(-2, 3), 20, 40))
    amplitude = profile.amplitude_scale * float(rng.uniform(0.9, 1.1))
    spike = _biphasic_spike(width)
    samples = np.zeros(profile.n_samples)
    for start in _activation_starts(profile, rng, spike.size):
        _stamp(samples, spike, int(start), amplitude)
    return _signal(profile, _add_baseline_noise(samples, amplitude, profile.noise_sd, rng), signal_id)


def _fractionated_complex(width: int, burst_amplitudes: np.ndarray) -> np.ndarray:
    spike = _biphasic_spike(width)
    bump = _bump()
    length = spike.size + BURST_GAP + BURST_SPACING * burst_amplitudes.size
    template = np.zeros(length)
    template[: spike.size] = spike
    for j, amplitude in enumerate(burst_amplitudes):
        start = spike.size + BURST_GAP + BURST_SPACING * j
        template[start : start + bump.size] += amplitude * bump
    return template


def gen_abnormal(profile: PatientProfile, rng: np.random.Generator, signal_id: str = "abnormal") -> EgmSignal:
    """Fractionated activations: a smaller main spike trailed by a burst of alternating deflections,
    plus isolated fractionation deflections between complexes."""
    amplitude = profile.amplitude_scale * float(rng.uniform(0.4, 0.8))
    n_burst = int(rng.integers(3, 8))
    levels = rng.uniform(*FRACTIONATION_RANGE, size=n_burst)
    signs = np.where(np.arange(n_burst) % 2 == 0, -1.0, 1.0)
    template = _fractionated_complex(profile.fractionated_width_ms, levels * signs)

    samples = np.zeros(profile.n_samples)
    starts = _activation_starts(profile, rng, template.size)
    for start in starts:
        _stamp(samples, template, int(start), amplitude)

    bump = _bump()
    for left, right in zip(starts, starts[1:]):
        quiet_start = int(left) + template.size + 10
        quiet_end = int(right) - 10
        n_extra = int(rng.integers(1, 4))
        slot = (quiet_end - quiet_start) // n_extra
        for k in range(n_extra):
            offset = int(rng.integers(0, max(slot - bump.size, 1)))
            level = float(rng.uniform(*FRACTIONATION_RANGE)) * (1.0 if rng.random() < 0.5 else -1.0)
            _stamp(samples, bump, quiet_start + k * slot + offset, amplitude * level)

    return _signal(profile, _add_baseline_noise(samples, amplitude, profile.noise_sd, rng), signal_id)


def gen_unclassified(
    profile: PatientProfile, rng: np.random.Generator, signal_id: str = "unclassified", variant: Optional[str] = None
) -> EgmSignal:
    """Either a loud signal with large stray deflections ("stray") or weak activity
    dominated by a single contact transient ("weak"); chosen at random unless given."""
    if variant is None:
        variant = "stray" if rng.random() < 0.5 else "weak"
    if variant == "stray":
        return _gen_stray(profile, rng, signal_id)
    if variant == "weak":
        return _gen_weak(profile, rng, signal_id)
    raise ValueError(f"Unknown unclassified variant {variant!r}")


def _gen_stray(profile: PatientProfile, rng: np.random.Generator, signal_id: str) -> EgmSignal:
    amplitude = profile.amplitude_scale * float(rng.uniform(1.5, 2.5))
    spike = _biphasic_spike(profile.spike_width_ms)
    cycle = profile.cycle_length_samples
    samples = np.zeros(profile.n_samples)
    starts = _activation_starts(profile, rng, spike.size)
    for start in starts:
        _stamp(samples, spike, int(start), amplitude)
    for left in starts[:-1]:
        for _ in range(int(rng.integers(1, 3))):
            width = int(rng.integers(6, 11))
            offset = int(rng.integers(int(0.35 * cycle), int(0.65 * cycle)))
            level = float(rng.uniform(*STRAY_RANGE)) * (1.0 if rng.random() < 0.5 else -1.0)
            _stamp(samples, _bump(width), int(left) + offset, amplitude * level)
    return _signal(profile, _add_baseline_noise(samples, amplitude, 2 * profile.noise_sd, rng), signal_id)


def _gen_weak(profile: PatientProfile, rng: np.random.Generator, signal_id: str) -> EgmSignal:
    transient_amplitude = profile.amplitude_scale * float(rng.uniform(0.1, 0.2))
    amplitude = transient_amplitude * float(rng.uniform(*WEAK_ACTIVITY_RANGE))
    spike = _biphasic_spike(profile.spike_width_ms)
    samples = np.zeros(profile.n_samples)
    starts = _activation_starts(profile, rng, spike.size)
    for start in starts:
        _stamp(samples, spike, int(start), amplitude)
    gap = int(rng.integers(0, max(starts.size - 1, 1)))
    transient = _bump(4)
    position = min(int(starts[gap]) + profile.cycle_length_samples // 2, profile.n_samples - transient.size)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    _stamp(samples, transient, position, sign * transient_amplitude)
    return _signal(profile, _add_baseline_noise(samples, amplitude, profile.noise_sd, rng), signal_id)


GENERATORS = {
    Label.NORMAL: gen_normal,
    Label.ABNORMAL: gen_abnormal,
    Label.UNCLASSIFIED: gen_unclassified,
}


def _generate_patient(config: GeneratorConfig, patient_index: int) -> List[LabeledSignal]:
    profile = make_profile(config, patient_index)
    weights = np.asarray(config.class_mix, dtype=np.float64)
    weights = weights / weights.sum()
    records = []
    for signal_index in range(config.signals_per_patient):
        rng = np.random.default_rng([config.seed, 1, patient_index, signal_index])
        label = LABEL_ORDER[int(rng.choice(len(LABEL_ORDER), p=weights))]
        signal_id = f"{profile.patient_id}-S{signal_index + 1:04d}"
        records.append(LabeledSignal(signal=GENERATORS[label](profile, rng, signal_id), label=label))
    return records


def split_assignment_for(config: GeneratorConfig) -> Dict[str, Split]:
    n_train, n_val, _ = config.resolved_split_counts
    assignment = {}
    for index in range(config.n_patients):
        if index < n_train:
            split = Split.TRAIN
        elif index < n_train + n_val:
            split = Split.VALIDATION
        else:
            split = Split.TEST
        assignment[patient_id_for(index)] = split
    return assignment


def gen_dataset(config: GeneratorConfig, workers: int = 1) -> Dataset:
    """Generate a labelled cohort. Every signal has its own seed stream, so the result does not
    depend on ``workers``."""
    indices = range(config.n_patients)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_patient = list(pool.map(lambda i: _generate_patient(config, i), indices))
    else:
        per_patient = [_generate_patient(config, i) for i in indices]

    records = tuple(record for patient in per_patient for record in patient)
    dataset = Dataset(records=records, split_assignment=split_assignment_for(config))
    for split in Split:
        logger.info("Generated %d %s signals", len(dataset.records_in(split)), split.value)
    return dataset


def simulate_annotators(
    record: LabeledSignal, disagreement_prob: float, rng: np.random.Generator, n_annotators: int = 3
) -> LabeledSignal:
    """Attach independent annotator labels: each reports the truth with probability
    ``1 - disagreement_prob``, otherwise one of the other labels uniformly."""
    if record.label is None:
        raise ValueError(f"Signal {record.signal_id} has no ground-truth label to annotate")
    if not 0.0 <= disagreement_prob <= 1.0:
        raise ValueError("disagreement_prob must lie in [0, 1]")
    others = [label for label in LABEL_ORDER if label != record.label]
    annotations = []
    for _ in range(n_annotators):
        if rng.random() < disagreement_prob:
            annotations.append(others[int(rng.integers(0, len(others)))])
        else:
            annotations.append(record.label)
    # a unanimous panel overrides the ground truth, as it would for clinical annotations
    label = annotations[0] if len(set(annotations)) == 1 else record.label
    return LabeledSignal(signal=record.signal, label=label, annotator_labels=tuple(annotations))


def class_counts(records) -> Dict[str, int]:
    counts = {label.value: 0 for label in LABEL_ORDER}
    for record in records:
        if record.label is not None:
            counts[record.label.value] += 1
    return counts
