import csv
import logging

import numpy as np
import pytest

from app.errors import EmptyGrid, UnlabeledData
from app.rule_search import (
    ABLATION_COLUMNS,
    GRID_COLUMNS,
    RuleGrid,
    ablation_table,
    grid_search,
    write_ablation_csv,
    write_grid_csv,
)
from app.rules import RuleParams, classify
from app.signals import Dataset, EgmSignal, Label, LabeledSignal, Split
from app.synthgen import GeneratorConfig, gen_dataset


@pytest.fixture(scope="module")
def oracle_dataset():
    return gen_dataset(GeneratorConfig(seed=21, n_patients=3, signals_per_patient=8, noise_sd=0.0))


def test_single_point_grid_returns_that_point(oracle_dataset):
    grid = RuleGrid(
        window_fracs=[0.4], padding_samples=[45], unclassified_thresholds=[0.15], abnormal_thresholds=[0.10]
    )
    result = grid_search(oracle_dataset, grid)
    assert result.best == RuleParams()
    assert result.best_accuracy == 1.0
    assert len(result.table) == 1


def test_better_point_wins(oracle_dataset):
    grid = RuleGrid(
        window_fracs=[0.4], padding_samples=[45], unclassified_thresholds=[0.15, 0.30], abnormal_thresholds=[0.10]
    )
    result = grid_search(oracle_dataset, grid)
    assert result.best.unclassified_threshold_frac == 0.15
    assert result.best_accuracy == 1.0
    assert all(result.best_accuracy >= row.accuracy for row in result.table)


def test_cached_sweep_matches_direct_classification(oracle_dataset):
    grid = RuleGrid(
        window_fracs=[0.3, 0.4],
        padding_samples=[0, 45],
        unclassified_thresholds=[0.1, 0.15],
        abnormal_thresholds=[0.08, 0.1],
    )
    records = oracle_dataset.records_in(Split.TRAIN, Split.VALIDATION)
    result = grid_search(oracle_dataset, grid, threads=2)
    assert len(result.table) == 16
    for row in result.table:
        direct = sum(classify(r.signal, row.params) == r.label for r in records)
        assert row.correct == direct
    assert [row.key for row in result.table] == sorted(row.key for row in result.table)


def test_ties_go_to_smallest_tuple():
    samples = np.zeros(2000)
    samples[[200, 800, 1400]] = 1.0
    signal = EgmSignal("s", "P01", 1000.0, samples, 600.0)
    dataset = Dataset.from_records([LabeledSignal(signal, classify(signal))], Split.TRAIN)
    grid = RuleGrid(
        window_fracs=[0.3, 0.4], padding_samples=[45], unclassified_thresholds=[0.15], abnormal_thresholds=[0.1]
    )
    result = grid_search(dataset, grid)
    assert [row.correct for row in result.table] == [1, 1]
    assert result.best.window_frac == 0.3


def test_empty_grid():
    grid = RuleGrid(unclassified_thresholds=[0.05], abnormal_thresholds=[0.10])
    assert grid.points() == []
    with pytest.raises(EmptyGrid):
        grid_search(Dataset(), grid)


def test_invalid_points_are_skipped():
    grid = RuleGrid(
        window_fracs=[0.4], padding_samples=[45], unclassified_thresholds=[0.15], abnormal_thresholds=[0.05]
    )
    assert grid.points() == []
    assert len(RuleGrid().points(RuleParams(peak_floor_frac=0.01))) == 9 * 5 * 21


def test_unlabeled_records_are_rejected(oracle_dataset):
    records = [LabeledSignal(r.signal) for r in oracle_dataset.records_in(Split.TRAIN)]
    with pytest.raises(UnlabeledData):
        grid_search(Dataset.from_records(records, Split.TRAIN))


def test_ablation_table_shape_and_scale_invariance(oracle_dataset, tmp_path):
    cells = ablation_table(oracle_dataset, seed=3)
    assert len(cells) == 4
    assert {(c.normalisation, c.cropping) for c in cells} == {(n, c) for n in (True, False) for c in (True, False)}
    by_key = {(c.normalisation, c.cropping): c for c in cells}
    for cropping in (True, False):
        on, off = by_key[(True, cropping)], by_key[(False, cropping)]
        assert (on.train_val_accuracy, on.test_accuracy) == (off.train_val_accuracy, off.test_accuracy)
    assert by_key[(True, False)].train_val_accuracy == 1.0

    path = tmp_path / "ablation.csv"
    write_ablation_csv(cells, path)
    rows = list(csv.reader(path.read_text().splitlines()))
    assert rows[0] == ABLATION_COLUMNS
    assert len(rows) == 5


def test_grid_csv(oracle_dataset, tmp_path):
    grid = RuleGrid(
        window_fracs=[0.4], padding_samples=[30, 45], unclassified_thresholds=[0.15], abnormal_thresholds=[0.1]
    )
    path = tmp_path / "grid.csv"
    write_grid_csv(grid_search(oracle_dataset, grid), path)
    rows = list(csv.reader(path.read_text().splitlines()))
    assert rows[0] == GRID_COLUMNS
    assert [row[1] for row in rows[1:]] == ["30", "45"]


def test_cropping_never_beats_the_full_signal_on_long_cycles():
    config = GeneratorConfig(
        seed=5, n_patients=3, signals_per_patient=20, noise_sd=0.0, cycle_length_mean_ms=650.0, cycle_length_sd_ms=0.0
    )
    by_key = {(c.normalisation, c.cropping): c for c in ablation_table(gen_dataset(config), seed=1)}
    for normalisation in (True, False):
        cropped, full = by_key[(normalisation, True)], by_key[(normalisation, False)]
        assert cropped.train_val_accuracy <= full.train_val_accuracy
        assert cropped.test_accuracy <= full.test_accuracy
    assert by_key[(True, False)].train_val_accuracy == 1.0


def test_too_short_cycle_counts_as_unclassified(oracle_dataset, caplog):
    samples = np.zeros(2000)
    samples[[200, 800, 1400]] = 1.0
    short = LabeledSignal(EgmSignal("short", "P99", 1000.0, samples, 50.0), Label.UNCLASSIFIED)
    records = oracle_dataset.records_in(Split.TRAIN, Split.VALIDATION)
    grid = RuleGrid(
        window_fracs=[0.4], padding_samples=[45], unclassified_thresholds=[0.15], abnormal_thresholds=[0.10]
    )
    with caplog.at_level(logging.WARNING, logger="app.rule_search"):
        result = grid_search(Dataset.from_records([*records, short], Split.TRAIN), grid)
    assert result.table[0].correct == len(records) + 1
    assert result.best_accuracy == 1.0
    assert "short" in caplog.text

    assignment = {**oracle_dataset.split_assignment, "P99": Split.TEST}
    cells = ablation_table(Dataset(records=(*oracle_dataset.records, short), split_assignment=assignment))
    assert len(cells) == 4
