import json
import os

import pytest
from click.testing import CliRunner

from app.cli import main
from app.config import ENV_SEED
from app.signals import LABEL_ORDER

UNANIMOUS_VS_SPECIALISTS = [[50, 2, 8], [2, 34, 1], [0, 0, 38]]
SMALL_COHORT = ["--set", "data.signals_per_patient=4", "--set", "data.noise_sd=0.0"]
TINY_NETWORK = [
    "--set",
    "network.n_stages=1",
    "--set",
    "network.tail_lstm=false",
    "--set",
    "network.base_filters=2",
    "--set",
    "network.kernel_size=3",
    "--set",
    "network.hidden_dense=4",
    "--set",
    "network.input_length=64",
    "--set",
    "train.crop_window_ms=64",
    "--set",
    "train.epochs=1",
]
SPLIT_FILES = ("train.jsonl", "val.jsonl", "test.jsonl")


# Helper to load fixture files
def load_fixture(filename):
    """Load a fixture file from the fixtures directory."""
    fixtures_dir = os.path.join(os.path.dirname(__file__), "fixtures")
    with open(os.path.join(fixtures_dir, filename)) as f:
        return f.read()


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    monkeypatch.setenv(ENV_SEED, "0")
    monkeypatch.delenv(ENV_SEED)
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def dataset_dir(runner, tmp_path):
    directory = tmp_path / "data"
    result = runner.invoke(main, ["synth", "--out", str(directory), "--seed", "3", *SMALL_COHORT])
    assert result.exit_code == 0, result.output
    return directory


def write_agreement_predictions(directory):
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, row in enumerate(UNANIMOUS_VS_SPECIALISTS):
        for j, count in enumerate(row):
            for _ in range(count):
                lines.append(
                    {
                        "signal_id": f"S{len(lines):04d}",
                        "patient_id": "P09",
                        "label": LABEL_ORDER[i].value,
                        "prediction": LABEL_ORDER[j].value,
                    }
                )
    (directory / "predictions.jsonl").write_text("".join(json.dumps(line) + "\n" for line in lines))


def test_version(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert "0.1.0" in result.output


def test_synth_writes_patient_splits(dataset_dir):
    summary = json.loads((dataset_dir / "summary.json").read_text())
    assert [len(summary["splits"][s]["patients"]) for s in ("train", "val", "test")] == [7, 1, 1]
    assert sum(summary["splits"][s]["signals"] for s in ("train", "val", "test")) == 36
    assert all((dataset_dir / name).exists() for name in SPLIT_FILES)
    assert json.loads((dataset_dir / "run_config.json").read_text())["config"]["data"]["seed"] == 3


def test_synth_is_reproducible(runner, dataset_dir, tmp_path):
    again = tmp_path / "again"
    result = runner.invoke(main, ["--threads", "3", "synth", "--out", str(again), "--seed", "3", *SMALL_COHORT])
    assert result.exit_code == 0, result.output
    for name in SPLIT_FILES:
        assert (again / name).read_bytes() == (dataset_dir / name).read_bytes()


def test_synth_with_annotators(runner, tmp_path):
    out = tmp_path / "annotated"
    args = ["synth", "--out", str(out), *SMALL_COHORT, "--set", "data.disagreement_prob=0.3"]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    annotation = json.loads((out / "summary.json").read_text())["annotation"]
    assert annotation["before"] == 36
    assert annotation["after"] <= 36


def test_bad_config_key_exits_2(runner, tmp_path):
    result = runner.invoke(main, ["synth", "--out", str(tmp_path / "x"), "--set", "data.bogus=1"])
    assert result.exit_code == 2
    assert "data.bogus" in result.output
    config = tmp_path / "run.toml"
    config.write_text("[rule]\nwindow_size = 0.4\n")
    result = runner.invoke(main, ["rule", "classify", "--config", str(config)])
    assert result.exit_code == 2


def test_missing_dataset(runner, tmp_path):
    assert runner.invoke(main, ["rule", "classify", "--out", str(tmp_path / "r")]).exit_code == 2
    result = runner.invoke(main, ["rule", "classify", "--data", str(tmp_path / "absent"), "--out", str(tmp_path / "r")])
    assert result.exit_code == 3


def test_rule_classify_noiseless_corpus(runner, dataset_dir, tmp_path):
    out = tmp_path / "rule"
    result = runner.invoke(main, ["rule", "classify", "--data", str(dataset_dir), "--out", str(out), "--split", "all"])
    assert result.exit_code == 0, result.output
    assert "accuracy 1.0000" in result.output
    assert len((out / "predictions.jsonl").read_text().splitlines()) == 36
    assert {"metrics.txt", "metrics.csv", "metrics.json", "misclassified.json"} <= {p.name for p in out.iterdir()}
    assert json.loads((out / "misclassified.json").read_text()) == {"misclassified": []}


def test_rule_grid_and_ablate(runner, dataset_dir, tmp_path):
    grid = tmp_path / "grid.toml"
    grid.write_text(
        "window_fracs = [0.35, 0.4]\n"
        "padding_samples = [45]\n"
        "unclassified_thresholds = [0.15]\n"
        "abnormal_thresholds = [0.1]\n"
    )
    out = tmp_path / "grid"
    result = runner.invoke(main, ["rule", "grid", "--data", str(dataset_dir), "--out", str(out), "--grid", str(grid)])
    assert result.exit_code == 0, result.output
    assert len((out / "grid.csv").read_text().splitlines()) == 3
    assert json.loads((out / "best_params.json").read_text())["accuracy"] == 1.0

    out = tmp_path / "ablate"
    result = runner.invoke(main, ["rule", "ablate", "--data", str(dataset_dir), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "ablation.csv").read_text().splitlines()[0] == (
        "normalisation,cropping,train_val_accuracy,test_accuracy"
    )


def test_nn_train_then_eval(runner, dataset_dir, tmp_path):
    out = tmp_path / "nn"
    result = runner.invoke(main, ["nn", "train", "--data", str(dataset_dir), "--out", str(out), *TINY_NETWORK])
    assert result.exit_code == 0, result.output
    assert (out / "checkpoint" / "manifest.json").exists()
    assert len((out / "training_log.csv").read_text().splitlines()) == 2

    evaluated = tmp_path / "eval"
    args = ["nn", "eval", "--out", str(evaluated), "--checkpoint", str(out / "checkpoint")]
    result = runner.invoke(main, [*args, "--config", str(out / "run_config.json")])
    assert result.exit_code == 0, result.output
    assert len((evaluated / "predictions.jsonl").read_text().splitlines()) == 4


def test_nn_eval_rejects_a_different_network(runner, dataset_dir, tmp_path):
    out = tmp_path / "nn"
    result = runner.invoke(main, ["nn", "train", "--data", str(dataset_dir), "--out", str(out), *TINY_NETWORK])
    assert result.exit_code == 0, result.output
    checkpoint = str(out / "checkpoint")
    args = ["nn", "eval", "--data", str(dataset_dir), "--out", str(tmp_path / "e"), "--checkpoint", checkpoint]
    result = runner.invoke(main, [*args, *TINY_NETWORK, "--set", "network.n_stages=2"])
    assert result.exit_code == 5
    assert "do not match" in result.output


def test_nn_eval_with_missing_checkpoint(runner, dataset_dir, tmp_path):
    args = ["nn", "eval", "--data", str(dataset_dir), "--out", str(tmp_path / "e"), "--checkpoint", str(tmp_path)]
    assert runner.invoke(main, args).exit_code == 5


def test_gradcheck_passes(runner):
    result = runner.invoke(main, ["nn", "gradcheck", "--entries", "3"])
    assert result.exit_code == 0, result.output
    assert "max relative error" in result.output


def test_report_matches_golden_table(runner, tmp_path):
    source, target = tmp_path / "run", tmp_path / "report"
    write_agreement_predictions(source)
    result = runner.invoke(main, ["report", "--in", str(source), "--out", str(target)])
    assert result.exit_code == 0, result.output
    assert (target / "metrics.txt").read_text() == load_fixture("unanimous_vs_specialists_metrics.txt")
    assert len(json.loads((target / "misclassified.json").read_text())["misclassified"]) == 13


def test_report_without_predictions(runner, tmp_path):
    result = runner.invoke(main, ["report", "--in", str(tmp_path), "--out", str(tmp_path / "r")])
    assert result.exit_code == 3


def test_report_plots(runner, dataset_dir, tmp_path):
    run = tmp_path / "rule"
    runner.invoke(main, ["rule", "classify", "--data", str(dataset_dir), "--out", str(run), "--split", "test"])
    clean = runner.invoke(main, ["report", "--in", str(run), "--out", str(tmp_path / "clean"), "--plots"])
    assert clean.exit_code == 0, clean.output
    assert not (tmp_path / "clean" / "plots").exists()

    lines = (run / "predictions.jsonl").read_text().splitlines()
    first = json.loads(lines[0])
    first["prediction"] = next(label.value for label in LABEL_ORDER if label.value != first["label"])
    (run / "predictions.jsonl").write_text("\n".join([json.dumps(first), *lines[1:]]) + "\n")

    svgs = []
    for name in ("plots_a", "plots_b"):
        result = runner.invoke(main, ["report", "--in", str(run), "--out", str(tmp_path / name), "--plots"])
        assert result.exit_code == 0, result.output
        files = sorted((tmp_path / name / "plots").glob("*.svg"))
        assert [f.stem for f in files] == [first["signal_id"]]
        svgs.append(files[0].read_bytes())
    assert svgs[0] == svgs[1]
