"""Rule-based EGM classifier.

Pipeline: rectify, locate the highest activation peak, stride cycle-length windows
outwards from it to find the other activation peaks, split the signal into regions
between consecutive peaks, label each region from its interior deflections, then
aggregate the region labels into one label for the signal.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import AllZeroSignal, InconsistentInput, InvalidCycleLength, TooFewPeaks
from .preprocessing import normalize, rectify
from .signals import EgmSignal, Label


class RuleParams(BaseModel):
    """Hyperparameters of the rule classifier. Amplitude fractions are relative to the highest peak."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    window_frac: float = Field(0.40, gt=0, lt=1, description="Search window width as a fraction of cycle length")
    padding_samples: int = Field(45, ge=0, description="Samples added to the search window width")
    unclassified_threshold_frac: float = Field(0.15, gt=0, lt=1, description="Region 'unclassified' threshold")
    abnormal_threshold_frac: float = Field(0.10, gt=0, lt=1, description="Region 'abnormal' threshold")
    min_peaks: int = Field(3, ge=2, description="Fewer detected activation peaks than this means unclassified")
    peak_floor_frac: float = Field(0.05, ge=0, lt=1, description="Window maxima below this yield no peak")

    @model_validator(mode="after")
    def _check_ordering(self) -> "RuleParams":
        if self.abnormal_threshold_frac > self.unclassified_threshold_frac:
            raise ValueError("abnormal_threshold_frac must not exceed unclassified_threshold_frac")
        if self.peak_floor_frac >= self.abnormal_threshold_frac:
            raise ValueError("peak_floor_frac must be below abnormal_threshold_frac")
        return self

    @property
    def stride_frac(self) -> float:
        return 1.0 - self.window_frac / 2.0


@dataclass(frozen=True)
class Peak:
    index: int
    amplitude: float


@dataclass(frozen=True, eq=False)
class Region:
    left_peak: Peak
    right_peak: Peak
    interior: np.ndarray

    def __post_init__(self) -> None:
        if self.left_peak.index >= self.right_peak.index:
            raise InconsistentInput("Region peaks must be strictly increasing")


def find_global_peak(rectified: EgmSignal) -> Peak:
    """Highest sample of a rectified signal; earliest index wins ties."""
    samples = rectified.samples
    index = int(np.argmax(samples))
    amplitude = float(samples[index])
    if amplitude <= 0.0:
        raise AllZeroSignal(f"Signal {rectified.signal_id} has no nonzero sample")
    return Peak(index, amplitude)


def window_geometry(cycle_length: int, params: RuleParams) -> tuple:
    """Search window width and stride, both in samples."""
    width = int(round(params.window_frac * cycle_length)) + params.padding_samples
    stride = int(round(params.stride_frac * cycle_length))
    return width, stride


def find_activation_peaks(rectified: EgmSignal, params: RuleParams) -> List[Peak]:
    """Stride search windows from the highest peak in both directions.

    A window is ``[centre - W//2, centre + W//2]`` clipped to the signal. Its argmax
    becomes a peak when it reaches ``peak_floor_frac`` of the highest peak, and the
    next window is then centred one stride away from that peak; otherwise the next
    window is one stride away from the current centre.

    Raises:
        AllZeroSignal: if the signal has no nonzero sample
        InvalidCycleLength: if the cycle length does not exceed the window width
    """
    samples = rectified.samples
    n = samples.size
    global_peak = find_global_peak(rectified)
    cycle_length = rectified.cycle_length_samples
    width, stride = window_geometry(cycle_length, params)
    if cycle_length <= width:
        raise InvalidCycleLength(f"Cycle length of {cycle_length} samples does not exceed window width {width}")

    floor = params.peak_floor_frac * global_peak.amplitude
    half = width // 2
    found = {global_peak.index: global_peak}

    for direction in (1, -1):
        anchor = global_peak.index
        centre = anchor + direction * stride
        while 0 <= centre < n:
            lo = max(centre - half, 0)
            hi = min(centre + half, n - 1)
            index = lo + int(np.argmax(samples[lo : hi + 1]))
            amplitude = float(samples[index])
            if amplitude >= floor:
                found.setdefault(index, Peak(index, amplitude))
                next_centre = index + direction * stride
            else:
                next_centre = centre + direction * stride
            # the search must keep moving outwards
            if (next_centre - centre) * direction <= 0:
                next_centre = centre + direction
            centre = next_centre

    return [found[i] for i in sorted(found)]


def segment_regions(peaks: Sequence[Peak], rectified: EgmSignal) -> List[Region]:
    if len(peaks) < 2:
        raise TooFewPeaks(f"Need at least 2 peaks to form a region, got {len(peaks)}")
    samples = rectified.samples
    return [Region(left, right, samples[left.index + 1 : right.index]) for left, right in zip(peaks, peaks[1:])]


def interior_maxima(region: Region) -> np.ndarray:
    """Amplitudes of the interior's local maxima, largest first.

    A local maximum is strictly above both neighbours; on a plateau the first sample
    counts. The bounding peaks serve as outer neighbours of the interior.
    """
    interior = np.asarray(region.interior, dtype=np.float64)
    if interior.size == 0:
        return interior
    padded = np.concatenate(([region.left_peak.amplitude], interior, [region.right_peak.amplitude]))
    # Collapse plateaus so each run of equal values is judged once, by its first sample.
    starts = np.flatnonzero(np.concatenate(([True], padded[1:] != padded[:-1])))
    values = padded[starts]
    rising = np.concatenate(([False], values[1:] > values[:-1]))
    falling = np.concatenate((values[:-1] > values[1:], [False]))
    is_max = rising & falling
    # Only runs that start inside the interior are interior maxima.
    inside = (starts >= 1) & (starts <= interior.size)
    return np.sort(values[is_max & inside])[::-1]


def largest_interior_maximum(region: Region) -> float:
    maxima = interior_maxima(region)
    return float(maxima[0]) if maxima.size else 0.0


def classify_region(region: Region, global_amplitude: float, params: RuleParams) -> Label:
    return label_for_amplitude(largest_interior_maximum(region), global_amplitude, params)


def label_for_amplitude(p1: float, global_amplitude: float, params: RuleParams) -> Label:
    """Region rules applied to the largest interior maximum ``p1``; missing maxima count as 0."""
    if p1 > params.unclassified_threshold_frac * global_amplitude:
        return Label.UNCLASSIFIED
    if p1 < params.abnormal_threshold_frac * global_amplitude:
        return Label.NORMAL
    return Label.ABNORMAL


def _alternates(labels: Sequence[Label]) -> bool:
    return all(a != b for a, b in zip(labels, labels[1:])) and set(labels) <= {Label.NORMAL, Label.ABNORMAL}


def aggregate(region_labels: Sequence[Label], peak_count: int, params: RuleParams) -> Label:
    """Combine region labels into the signal label.

    Raises:
        InconsistentInput: if the number of labels does not match ``peak_count - 1``
    """
    expected = max(peak_count - 1, 0)
    if peak_count < 0 or len(region_labels) != expected:
        raise InconsistentInput(f"{peak_count} peaks imply {expected} regions, got {len(region_labels)} labels")

    if peak_count < params.min_peaks or Label.UNCLASSIFIED in region_labels:
        return Label.UNCLASSIFIED
    if all(label == Label.NORMAL for label in region_labels):
        return Label.NORMAL
    if all(label == Label.ABNORMAL for label in region_labels):
        return Label.ABNORMAL
    if _alternates(region_labels):
        # alternating normal/abnormal regions: normal EGM recorded near the ventricle
        return Label.NORMAL
    return Label.ABNORMAL


def classify(signal: EgmSignal, params: Optional[RuleParams] = None, normalize_first: bool = True) -> Label:
    params = params or RuleParams()
    try:
        if normalize_first:
            signal = normalize(signal)
        rectified = rectify(signal)
        global_peak = find_global_peak(rectified)
        peaks = find_activation_peaks(rectified, params)
    except AllZeroSignal:
        return Label.UNCLASSIFIED

    if len(peaks) < params.min_peaks:
        return Label.UNCLASSIFIED
    regions = segment_regions(peaks, rectified)
    labels = [classify_region(region, global_peak.amplitude, params) for region in regions]
    return aggregate(labels, len(peaks), params)
