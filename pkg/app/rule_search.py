"""Hyperparameter grid search and the normalisation x cropping ablation for the rule classifier."""

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import AllZeroSignal, DatasetIOError, EmptyGrid, EmptyInput, InvalidCycleLength, UnlabeledData
from .preprocessing import normalize, random_crop, rectify
from .rules import (
    RuleParams,
    aggregate,
    classify,
    find_activation_peaks,
    find_global_peak,
    label_for_amplitude,
    largest_interior_maximum,
    segment_regions,
)
from .signals import Dataset, Label, LabeledSignal, Split

logger = logging.getLogger(__name__)

GRID_COLUMNS = ["window_frac", "padding_samples", "unclassified_threshold_frac", "abnormal_threshold_frac", "accuracy"]
ABLATION_COLUMNS = ["normalisation", "cropping", "train_val_accuracy", "test_accuracy"]


def _hundredths(start: int, stop: int, step: int) -> List[float]:
    # built from integers so 0.15 is exactly float("0.15")
    return [v / 100 for v in range(start, stop + 1, step)]


class RuleGrid(BaseModel):
    """Candidate values per hyperparameter. Abnormal thresholds above the unclassified threshold are skipped."""

    model_config = ConfigDict(extra="forbid")

    window_fracs: List[float] = Field(default_factory=lambda: _hundredths(10, 50, 5))
    padding_samples: List[int] = Field(default_factory=lambda: [0, 15, 30, 45, 60])
    unclassified_thresholds: List[float] = Field(default_factory=lambda: _hundredths(5, 30, 5))
    abnormal_thresholds: List[float] = Field(default_factory=lambda: _hundredths(5, 30, 5))

    def points(self, base: Optional[RuleParams] = None) -> List[RuleParams]:
        """Valid parameter combinations in ascending tuple order."""
        base = base or RuleParams()
        points = []
        for window, padding, unclassified, abnormal in product(
            sorted(set(self.window_fracs)),
            sorted(set(self.padding_samples)),
            sorted(set(self.unclassified_thresholds)),
            sorted(set(self.abnormal_thresholds)),
        ):
            if abnormal > unclassified:
                continue
            try:
                points.append(
                    RuleParams(
                        window_frac=window,
                        padding_samples=padding,
                        unclassified_threshold_frac=unclassified,
                        abnormal_threshold_frac=abnormal,
                        min_peaks=base.min_peaks,
                        peak_floor_frac=base.peak_floor_frac,
                    )
                )
            except ValidationError as e:
                logger.debug(
                    "Skipping invalid grid point window=%s padding=%s thresholds=%s/%s: %s",
                    window,
                    padding,
                    unclassified,
                    abnormal,
                    e.errors()[0]["msg"],
                )
        return points


@dataclass(frozen=True)
class GridRow:
    params: RuleParams
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total

    @property
    def key(self) -> Tuple[float, int, float, float]:
        p = self.params
        return p.window_frac, p.padding_samples, p.unclassified_threshold_frac, p.abnormal_threshold_frac


@dataclass(frozen=True)
class GridResult:
    best: RuleParams
    best_accuracy: float
    table: List[GridRow]


@dataclass(frozen=True)
class _PeakFeatures:
    """Threshold-independent part of classifying one signal under one window geometry."""

    peak_count: int
    global_amplitude: float
    region_maxima: Tuple[float, ...]


def _peak_features(record: LabeledSignal, params: RuleParams) -> Optional[_PeakFeatures]:
    try:
        rectified = rectify(normalize(record.signal))
        global_peak = find_global_peak(rectified)
        peaks = find_activation_peaks(rectified, params)
    except AllZeroSignal:
        return None
    except InvalidCycleLength as e:
        logger.warning("Signal %s counted as unclassified: %s", record.signal_id, e)
        return None
    if len(peaks) < params.min_peaks:
        return _PeakFeatures(len(peaks), global_peak.amplitude, ())
    regions = segment_regions(peaks, rectified)
    return _PeakFeatures(len(peaks), global_peak.amplitude, tuple(largest_interior_maximum(r) for r in regions))


def _label_from_features(features: Optional[_PeakFeatures], params: RuleParams) -> Label:
    # mirrors rules.classify step for step
    if features is None or features.peak_count < params.min_peaks:
        return Label.UNCLASSIFIED
    labels = [label_for_amplitude(p1, features.global_amplitude, params) for p1 in features.region_maxima]
    return aggregate(labels, features.peak_count, params)


def _evaluate_geometry(records: Sequence[LabeledSignal], group: List[RuleParams]) -> List[GridRow]:
    features = [_peak_features(record, group[0]) for record in records]
    rows = []
    for params in group:
        correct = sum(_label_from_features(f, params) == r.label for f, r in zip(features, records))
        row = GridRow(params, correct, len(records))
        logger.debug("Grid point %s accuracy %.4f", row.key, row.accuracy)
        rows.append(row)
    return rows


def grid_search(
    train_plus_val: Dataset, grid: Optional[RuleGrid] = None, base: Optional[RuleParams] = None, threads: int = 1
) -> GridResult:
    """Evaluate every grid point on the pooled training and validation records.

    Peak search depends only on the window geometry, so it runs once per
    (window_frac, padding) pair and the thresholds are swept over cached maxima.
    The winner has the highest accuracy; ties go to the smallest
    (window_frac, padding, unclassified, abnormal) tuple.
    A record whose cycle length does not exceed a window width counts as unclassified.

    Raises:
        EmptyGrid: if the grid holds no valid point
        UnlabeledData: if a record has no label
    """
    grid = grid or RuleGrid()
    points = grid.points(base)
    if not points:
        raise EmptyGrid("Rule grid has no valid parameter combination")
    records = list(train_plus_val.records_in(Split.TRAIN, Split.VALIDATION))
    if not records:
        raise EmptyInput("No training or validation records to search on")
    if any(r.label is None for r in records):
        raise UnlabeledData("Grid search needs every training and validation record labelled")

    groups: Dict[Tuple[float, int], List[RuleParams]] = {}
    for params in points:
        groups.setdefault((params.window_frac, params.padding_samples), []).append(params)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda g: _evaluate_geometry(records, g), groups.values()))
    else:
        chunks = [_evaluate_geometry(records, g) for g in groups.values()]

    table = sorted((row for chunk in chunks for row in chunk), key=lambda row: row.key)
    best = min(table, key=lambda row: (-row.correct, row.key))
    logger.info("Best rule parameters %s with accuracy %.4f over %d grid points", best.key, best.accuracy, len(table))
    return GridResult(best=best.params, best_accuracy=best.accuracy, table=table)


@dataclass(frozen=True)
class AblationCell:
    normalisation: bool
    cropping: bool
    train_val_accuracy: float
    test_accuracy: float


def _accuracy(
    records: Sequence[LabeledSignal],
    params: RuleParams,
    normalise: bool,
    crop_window_ms: float,
    crop_rng: Optional[np.random.Generator],
) -> float:
    if not records:
        raise EmptyInput("Ablation needs records in every split")
    correct = 0
    for record in records:
        if record.label is None:
            raise UnlabeledData(f"Signal {record.signal_id} has no label")
        signal = record.signal
        if crop_rng is not None:
            signal = random_crop(signal, crop_window_ms, crop_rng)
        try:
            label = classify(signal, params, normalize_first=normalise)
        except InvalidCycleLength as e:
            logger.warning("Signal %s counted as unclassified: %s", record.signal_id, e)
            label = Label.UNCLASSIFIED
        correct += label == record.label
    return correct / len(records)


def ablation_table(
    dataset: Dataset, params: Optional[RuleParams] = None, seed: int = 0, crop_window_ms: float = 1500.0
) -> List[AblationCell]:
    """Accuracy under {normalised, raw} x {random crop, full signal}.

    Every cropped cell draws its crops from a fresh generator seeded with ``seed``
    so the normalised and raw columns see the same windows.
    """
    params = params or RuleParams()
    train_val = dataset.records_in(Split.TRAIN, Split.VALIDATION)
    test = dataset.records_in(Split.TEST)
    cells = []
    for normalise, cropping in product((True, False), (True, False)):
        accuracies = []
        for records in (train_val, test):
            crop_rng = np.random.default_rng(seed) if cropping else None
            accuracies.append(_accuracy(records, params, normalise, crop_window_ms, crop_rng))
        cell = AblationCell(normalise, cropping, accuracies[0], accuracies[1])
        logger.info(
            "Ablation normalisation=%s cropping=%s: train+val %.4f, test %.4f",
            normalise,
            cropping,
            cell.train_val_accuracy,
            cell.test_accuracy,
        )
        cells.append(cell)
    return cells


def _write_csv(path: os.PathLike, header: List[str], rows: List[list]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise DatasetIOError(f"Cannot write {path}: {e}") from e


def write_grid_csv(result: GridResult, path: os.PathLike) -> None:
    _write_csv(path, GRID_COLUMNS, [[*row.key, repr(row.accuracy)] for row in result.table])


def write_ablation_csv(cells: Sequence[AblationCell], path: os.PathLike) -> None:
    rows = [
        [
            "on" if cell.normalisation else "off",
            "on" if cell.cropping else "off",
            repr(cell.train_val_accuracy),
            repr(cell.test_accuracy),
        ]
        for cell in cells
    ]
    _write_csv(path, ABLATION_COLUMNS, rows)
