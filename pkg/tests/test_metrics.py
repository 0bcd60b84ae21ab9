import itertools
import os
import random

import numpy as np
import pytest

from app.errors import EmptyInput, EmptyMatrix, InvalidLabel, LengthMismatch
from app.metrics import (
    ConfusionMatrix,
    confusion,
    evaluate,
    metrics,
    misclassified_dump,
    parse_csv,
    parse_json,
    render,
    round_half_away,
)
from app.signals import LABEL_ORDER, EgmSignal, Label, LabeledSignal

UNANIMOUS_VS_SPECIALISTS = [[50, 2, 8], [2, 34, 1], [0, 0, 38]]
EGM_LSTM_TEST = [[66, 10, 7], [8, 39, 5], [0, 4, 39]]
EGM_FFT_LSTM_TEST = [[43, 27, 13], [0, 25, 27], [0, 0, 43]]
RULE_TEST = [[42, 21, 20], [3, 35, 14], [0, 0, 43]]


# Helper to load fixture files
def load_fixture(filename):
    """Load a fixture file from the fixtures directory."""
    fixtures_dir = os.path.join(os.path.dirname(__file__), "fixtures")
    with open(os.path.join(fixtures_dir, filename)) as f:
        return f.read()


def rounded(values):
    return [float(round_half_away(v)) for v in values]


def pairs_from_matrix(matrix):
    truth, pred = [], []
    for i, row in enumerate(matrix):
        for j, count in enumerate(row):
            truth += [LABEL_ORDER[i]] * count
            pred += [LABEL_ORDER[j]] * count
    return truth, pred


def test_unanimous_vs_specialists_values():
    """Test the rule-classifier matrix reproduces its printed metrics."""
    report = metrics(ConfusionMatrix(UNANIMOUS_VS_SPECIALISTS))
    assert rounded(c.precision for c in report.classes) == [0.96, 0.94, 0.81]
    assert rounded(c.recall for c in report.classes) == [0.83, 0.92, 1.00]
    assert float(round_half_away(report.accuracy)) == 0.90
    assert [c.support for c in report.classes] == [60, 37, 38]


@pytest.mark.parametrize(
    "matrix, precision, recall, f1, accuracy",
    [
        (EGM_LSTM_TEST, [0.89, 0.74, 0.76], [0.80, 0.75, 0.91], [0.84, 0.74, 0.83], 0.81),
        (EGM_FFT_LSTM_TEST, [1.00, 0.48, 0.52], [0.52, 0.48, 1.00], [0.68, 0.48, 0.68], 0.62),
        (RULE_TEST, [0.93, 0.63, 0.56], [0.51, 0.67, 1.00], [0.66, 0.65, 0.72], 0.67),
    ],
)
def test_test_set_tables(matrix, precision, recall, f1, accuracy):
    report = metrics(ConfusionMatrix(matrix))
    assert rounded(c.precision for c in report.classes) == precision
    assert rounded(c.recall for c in report.classes) == recall
    assert rounded(c.f1 for c in report.classes) == f1
    assert float(round_half_away(report.accuracy)) == accuracy


@pytest.mark.parametrize(
    "matrix, filename",
    [
        (UNANIMOUS_VS_SPECIALISTS, "unanimous_vs_specialists_metrics.txt"),
        (EGM_LSTM_TEST, "egm_lstm_test_metrics.txt"),
        (RULE_TEST, "rule_test_metrics.txt"),
    ],
)
def test_text_rendering_matches_golden_file(matrix, filename):
    cm = ConfusionMatrix(matrix)
    assert render(cm, metrics(cm), "text") == load_fixture(filename)


def test_confusion_from_pairs():
    truth, pred = pairs_from_matrix(UNANIMOUS_VS_SPECIALISTS)
    cm = confusion(truth, pred)
    assert cm == ConfusionMatrix(UNANIMOUS_VS_SPECIALISTS)
    assert cm.supports == [60, 37, 38]
    assert cm.prediction_counts == [52, 36, 47]
    assert cm.total == 135


def test_permuting_pairs_changes_nothing():
    truth, pred = pairs_from_matrix(RULE_TEST)
    pairs = list(zip(truth, pred))
    random.Random(7).shuffle(pairs)
    shuffled = confusion([t for t, _ in pairs], [p for _, p in pairs])
    assert metrics(shuffled) == metrics(ConfusionMatrix(RULE_TEST))


def test_recall_is_exact_count_ratio():
    rng = np.random.default_rng(3)
    for _ in range(50):
        matrix = rng.integers(0, 20, size=(3, 3))
        matrix[0, 0] += 1
        report = metrics(ConfusionMatrix(matrix))
        for c, entry in enumerate(report.classes):
            support = int(matrix[c].sum())
            if support:
                assert entry.recall == int(matrix[c, c]) / support
        assert report.accuracy == int(np.trace(matrix)) / int(matrix.sum())


def test_zero_denominator_is_flagged():
    cm = ConfusionMatrix([[5, 0, 0], [3, 0, 0], [0, 0, 4]])
    abnormal = metrics(cm).for_label(Label.ABNORMAL)
    assert abnormal.precision == 0.0
    assert "precision" in abnormal.undefined
    assert abnormal.recall == 0.0
    text = render(cm, metrics(cm), "text")
    assert "0.00*" in text
    assert text.rstrip().endswith("reported as 0")


def test_rounding_moves_halves_away_from_zero():
    assert str(round_half_away(0.625)) == "0.63"
    assert str(round_half_away(0.125)) == "0.13"
    assert str(round_half_away(1.0)) == "1.00"
    assert str(round_half_away(0.8)) == "0.80"


def test_errors():
    with pytest.raises(LengthMismatch):
        confusion([Label.NORMAL], [])
    with pytest.raises(EmptyInput):
        confusion([], [])
    with pytest.raises(InvalidLabel):
        confusion([None], [Label.NORMAL])
    with pytest.raises(EmptyMatrix):
        metrics(ConfusionMatrix(np.zeros((3, 3), dtype=int)))


def test_csv_and_json_parse_back():
    cm = ConfusionMatrix(EGM_LSTM_TEST)
    report = metrics(cm)
    csv_text = render(cm, report, "csv")
    assert csv_text.splitlines()[0] == "class,precision,recall,f1,support,undefined"
    assert csv_text.splitlines()[-1].startswith("accuracy,")
    assert parse_csv(csv_text) == report
    assert parse_json(render(cm, report, "json")) == (cm, report)


def test_unknown_format():
    cm = ConfusionMatrix(UNANIMOUS_VS_SPECIALISTS)
    with pytest.raises(ValueError):
        render(cm, metrics(cm), "html")


def make_record(signal_id, label):
    signal = EgmSignal(signal_id, "P01", 1000.0, np.ones(10), 500.0)
    return LabeledSignal(signal, label)


def test_misclassified_dump_sorted_by_id():
    records = [make_record("b", Label.NORMAL), make_record("a", Label.ABNORMAL), make_record("c", Label.UNCLASSIFIED)]
    predictions = [Label.ABNORMAL, Label.NORMAL, Label.UNCLASSIFIED]
    wrong = misclassified_dump(records, predictions)
    assert [m.signal_id for m in wrong] == ["a", "b"]
    assert (wrong[0].truth, wrong[0].pred) == (Label.ABNORMAL, Label.NORMAL)


def test_evaluate_all_correct():
    records = [make_record(f"s{i}", label) for i, label in enumerate(itertools.islice(itertools.cycle(LABEL_ORDER), 9))]
    cm, report = evaluate(records, [r.label for r in records])
    assert report.accuracy == 1.0
    assert cm.to_lists() == [[3, 0, 0], [0, 3, 0], [0, 0, 3]]
