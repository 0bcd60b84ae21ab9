"""Command-line entry point: ``egm_triage``.

Exit codes: 0 ok, 1 failed gradient check, 2 configuration, 3 I/O, 4 data, 5 checkpoint.
Configuration precedence, lowest first: defaults, EGM_TRIAGE_SEED, --config file, flags.
"""

import functools
import json
import logging
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import click
import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import RUN_CONFIG_FILE, RunConfig, load_run_config, write_run_config
from .dataset_io import load_dataset, read_predictions, save_dataset, write_json, write_predictions
from .errors import EXIT_IO, ConfigError, DatasetIOError, EgmTriageError
from .metrics import ConfusionMatrix, MetricsReport, Misclassified, confusion, metrics, misclassified_dump, render
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.gradcheck import gradient_check, miniature_config
from .nn.training import fit, predict, sweep, write_sweep_csv
from .preprocessing import unanimous_filter
from .rule_search import RuleGrid, ablation_table, grid_search, write_ablation_csv, write_grid_csv
from .rules import classify
from .signals import Dataset, Label, LabeledSignal, Split
from .synthgen import class_counts, gen_dataset, simulate_annotators

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
GRADCHECK_TOLERANCE = 1e-4
EXIT_CHECK_FAILED = 1
SPLIT_CHOICES = ("train", "val", "test", "all")
METRIC_FILES = {"text": "metrics.txt", "csv": "metrics.csv", "json": "metrics.json"}


def handle_errors(command):
    """Map package errors to their exit codes at the command boundary."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except EgmTriageError as e:
            logger.error("%s: %s", type(e).__name__, e)
            click.echo(f"Error: {e}", err=True)
            sys.exit(e.exit_code)
        except OSError as e:
            logger.error("I/O error: %s", e)
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_IO)

    return wrapper


def run_options(command):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML or JSON run config"),
        click.option("--out", type=click.Path(file_okay=False), help="Output directory ([output].directory)"),
        click.option("--seed", type=int, help="Seed ([data].seed); overrides EGM_TRIAGE_SEED"),
        click.option(
            "--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE", help="Override one config value"
        ),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def data_option(command):
    return click.option("--data", "data_path", type=click.Path(file_okay=False), help="Dataset directory")(command)


def _resolve(
    config_path: Optional[str],
    out: Optional[str],
    seed: Optional[int],
    overrides: Sequence[str],
    data_path: Optional[str] = None,
) -> RunConfig:
    config = load_run_config(config_path, overrides, seed=seed, out=out, data_path=data_path)
    directory = Path(config.output.directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_run_config(config, directory)
    return config


def _load(config: RunConfig) -> Dataset:
    if not config.data.path:
        raise ConfigError("No dataset: pass --data or set data.path")
    return load_dataset(config.data.path)


def _records(dataset: Dataset, split: str) -> List[LabeledSignal]:
    if split == "all":
        return list(dataset.records)
    return dataset.records_in(Split(split))


def _write_metrics(
    directory: Path, cm: ConfusionMatrix, report: MetricsReport, wrong: Sequence[Misclassified], formats: Sequence[str]
) -> None:
    for fmt in formats:
        (directory / METRIC_FILES[fmt]).write_text(render(cm, report, fmt))
    payload = [{"signal_id": m.signal_id, "truth": m.truth.value, "pred": m.pred.value} for m in wrong]
    write_json({"misclassified": payload}, directory / "misclassified.json")


def write_evaluation(
    directory: Path, records: Sequence[LabeledSignal], predictions: Sequence[Label], formats: Sequence[str]
) -> Optional[float]:
    """Write metrics in every requested format plus the misclassified dump; returns the accuracy.

    Nothing but predictions is written when a record has no label.
    """
    if any(record.label is None for record in records):
        logger.warning("Unlabelled records present, skipping metrics")
        return None
    cm = confusion([record.label for record in records], list(predictions))
    report = metrics(cm)
    _write_metrics(directory, cm, report, misclassified_dump(records, predictions), formats)
    return report.accuracy


@click.group(help=__doc__)
@click.option("-v", "--verbose", is_flag=True, help="Debug logging")
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True, help="Worker threads")
@click.version_option(__version__)
@click.pass_context
def main(ctx: click.Context, verbose: bool, threads: int):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, stream=sys.stderr)
    ctx.obj = {"threads": threads}


@main.command()
@run_options
@click.pass_context
@handle_errors
def synth(ctx, config_path, out, seed, overrides):
    """Generate a synthetic dataset (train/val/test JSONL plus summary.json)."""
    config = _resolve(config_path, out, seed, overrides)
    directory = Path(config.output.directory)
    dataset = gen_dataset(config.data.generator_config(), workers=ctx.obj["threads"])
    summary: Dict[str, object] = {"generated": class_counts(dataset.records)}

    if config.data.disagreement_prob > 0:
        annotated = [
            simulate_annotators(record, config.data.disagreement_prob, np.random.default_rng([config.data.seed, 2, i]))
            for i, record in enumerate(dataset.records)
        ]
        kept = unanimous_filter(annotated)
        summary["annotation"] = {"before": len(annotated), "after": len(kept)}
        logger.info("Unanimous filter kept %d of %d signals", len(kept), len(annotated))
        dataset = Dataset(records=tuple(kept), split_assignment=dataset.split_assignment)

    counts = save_dataset(dataset, directory)
    summary["splits"] = {
        split.value: {
            "signals": counts[split.value],
            "patients": sorted(pid for pid, s in dataset.split_assignment.items() if s == split),
            "classes": class_counts(dataset.records_in(split)),
        }
        for split in Split
    }
    write_json(summary, directory / "summary.json")
    click.echo(f"Wrote {len(dataset)} signals to {directory}: " + ", ".join(f"{k} {v}" for k, v in counts.items()))


@main.group()
def rule():
    """Rule-based classifier."""


@rule.command("classify")
@run_options
@data_option
@click.option("--split", type=click.Choice(SPLIT_CHOICES), default="test", show_default=True)
@handle_errors
def rule_classify(config_path, out, seed, overrides, data_path, split):
    """Classify a split with the [rule] parameters and score the predictions."""
    config = _resolve(config_path, out, seed, overrides, data_path)
    directory = Path(config.output.directory)
    records = _records(_load(config), split)
    predictions = [classify(record.signal, config.rule) for record in records]
    write_predictions(records, predictions, directory / "predictions.jsonl")
    accuracy = write_evaluation(directory, records, predictions, config.output.formats)
    click.echo(f"Classified {len(records)} signals" + (f", accuracy {accuracy:.4f}" if accuracy is not None else ""))


def _read_grid(path: Optional[str]) -> RuleGrid:
    if path is None:
        return RuleGrid()
    grid_path = Path(path)
    try:
        text = grid_path.read_text()
    except OSError as e:
        raise DatasetIOError(f"Cannot read grid file {grid_path}: {e}") from e
    try:
        document = json.loads(text) if grid_path.suffix == ".json" else tomllib.loads(text)
        return RuleGrid.model_validate(document)
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"Invalid grid file {grid_path}: {e}") from e


@rule.command("grid")
@run_options
@data_option
@click.option("--grid", "grid_path", type=click.Path(dir_okay=False), help="TOML/JSON with candidate value lists")
@click.pass_context
@handle_errors
def rule_grid(ctx, config_path, out, seed, overrides, data_path, grid_path):
    """Grid-search the rule parameters on train+val.

    Writes grid.csv (window_frac, padding_samples, unclassified_threshold_frac,
    abnormal_threshold_frac, accuracy) and best_params.json.
    """
    config = _resolve(config_path, out, seed, overrides, data_path)
    directory = Path(config.output.directory)
    result = grid_search(_load(config), _read_grid(grid_path), base=config.rule, threads=ctx.obj["threads"])
    write_grid_csv(result, directory / "grid.csv")
    write_json(
        {"params": result.best.model_dump(), "accuracy": result.best_accuracy}, directory / "best_params.json"
    )
    click.echo(f"Best accuracy {result.best_accuracy:.4f} with {result.best.model_dump()}")


@rule.command("ablate")
@run_options
@data_option
@handle_errors
def rule_ablate(config_path, out, seed, overrides, data_path):
    """Normalisation x cropping ablation; writes ablation.csv (normalisation, cropping, train_val_accuracy,
    test_accuracy)."""
    config = _resolve(config_path, out, seed, overrides, data_path)
    directory = Path(config.output.directory)
    cells = ablation_table(
        _load(config), config.rule, seed=config.data.seed, crop_window_ms=config.train.crop_window_ms
    )
    write_ablation_csv(cells, directory / "ablation.csv")
    for cell in cells:
        click.echo(
            f"normalisation={'on' if cell.normalisation else 'off'} cropping={'on' if cell.cropping else 'off'}: "
            f"train+val {cell.train_val_accuracy:.4f} test {cell.test_accuracy:.4f}"
        )


@main.group()
def nn():
    """CNN-LSTM classifier."""


@nn.command("train")
@run_options
@data_option
@handle_errors
def nn_train(config_path, out, seed, overrides, data_path):
    """Train on the train split, select on val; writes checkpoint/ and training_log.csv."""
    config = _resolve(config_path, out, seed, overrides, data_path)
    directory = Path(config.output.directory)
    dataset = _load(config)
    result = fit(
        dataset.subset(Split.TRAIN),
        dataset.subset(Split.VALIDATION),
        config.network,
        config.train_config(),
        log_path=directory / "training_log.csv",
    )
    save_checkpoint(result.checkpoint, directory / "checkpoint")
    click.echo(
        f"Best validation accuracy {result.checkpoint.best_validation_accuracy:.4f} "
        f"at epoch {result.checkpoint.epoch_of_best}"
    )


@nn.command("eval")
@run_options
@data_option
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(file_okay=False))
@click.option("--split", type=click.Choice(SPLIT_CHOICES), default="test", show_default=True)
@handle_errors
def nn_eval(config_path, out, seed, overrides, data_path, checkpoint_path, split):
    """Predict a split with a checkpoint and score the predictions.

    The checkpoint must hold the tensors of the resolved [network] section; pass the
    training run's run_config.json with --config to reuse its settings.
    """
    config = _resolve(config_path, out, seed, overrides, data_path)
    directory = Path(config.output.directory)
    checkpoint = load_checkpoint(checkpoint_path, expected_config=config.network)
    records = _records(_load(config), split)
    predictions = predict(checkpoint, [record.signal for record in records], config.train.crop_window_ms)
    write_predictions(records, predictions, directory / "predictions.jsonl")
    accuracy = write_evaluation(directory, records, predictions, config.output.formats)
    click.echo(f"Predicted {len(records)} signals" + (f", accuracy {accuracy:.4f}" if accuracy is not None else ""))


@nn.command("gradcheck")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--entries", type=click.IntRange(min=1), default=20, show_default=True, help="Entries per tensor")
@click.pass_context
@handle_errors
def nn_gradcheck(ctx, seed, entries):
    """Finite-difference check of every backward pass on a miniature network (exit 1 above 1e-4)."""
    result = gradient_check(miniature_config(), np.random.default_rng(seed), entries_per_tensor=entries)
    click.echo(
        f"max relative error {result.max_relative_error:.3e} over {result.checked} entries "
        f"({result.skipped_kinks} kinks skipped)"
    )
    if not result.passed(GRADCHECK_TOLERANCE):
        if not result.loss_reproducible:
            click.echo("loss is not reproducible", err=True)
        ctx.exit(EXIT_CHECK_FAILED)


def _parse_stages(value: str) -> List[int]:
    try:
        stages = [int(part) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from e
    if not stages:
        raise click.BadParameter("at least one stage count is needed")
    return stages


@nn.command("sweep")
@run_options
@data_option
@click.option("--stages", default="1,2,3,4,5,6,7,8", show_default=True, help="Comma-separated stage counts")
@click.option("--epochs", type=click.IntRange(min=1), help="Epochs per run (overrides [train].epochs)")
@handle_errors
def nn_sweep(config_path, out, seed, overrides, data_path, stages, epochs):
    """Best validation accuracy per stage count and variant; writes sweep.csv (n_stages, egm_lstm, egm_gap,
    egm_fft_lstm, egm_fft_gap) and sweep_best_epochs.csv."""
    overrides = list(overrides) + ([f"train.epochs={epochs}"] if epochs is not None else [])
    config = _resolve(config_path, out, seed, overrides, data_path)
    directory = Path(config.output.directory)
    dataset = _load(config)
    rows = sweep(
        dataset.subset(Split.TRAIN),
        dataset.subset(Split.VALIDATION),
        config.network,
        config.train_config(),
        _parse_stages(stages),
    )
    write_sweep_csv(rows, directory / "sweep.csv")
    write_sweep_csv(rows, directory / "sweep_best_epochs.csv", values="best_epochs")
    click.echo(f"Wrote {len(rows)} sweep rows to {directory / 'sweep.csv'}")


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(file_okay=False), help="Completed run directory")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Report directory")
@click.option("--plots", is_flag=True, help="SVG plot per misclassified signal")
@handle_errors
def report(in_dir, out_dir, plots):
    """Render metric tables (and optional plots) from a run's predictions.jsonl."""
    source, target = Path(in_dir), Path(out_dir)
    if not (source / "predictions.jsonl").exists():
        raise DatasetIOError(f"{source} has no predictions.jsonl")
    config = load_run_config(source / RUN_CONFIG_FILE) if (source / RUN_CONFIG_FILE).exists() else RunConfig()
    rows = read_predictions(source / "predictions.jsonl")
    if any(row.label is None for row in rows):
        raise DatasetIOError(f"{source / 'predictions.jsonl'} lacks ground-truth labels")
    target.mkdir(parents=True, exist_ok=True)
    write_run_config(config, target)

    cm = confusion([row.label for row in rows], [row.prediction for row in rows])
    result = metrics(cm)
    wrong = sorted(
        (Misclassified(row.signal_id, row.label, row.prediction) for row in rows if row.label != row.prediction),
        key=lambda item: item.signal_id,
    )
    _write_metrics(target, cm, result, wrong, config.output.formats)

    written = 0
    if plots and wrong:
        from .plots import plot_misclassified

        if not config.data.path:
            raise DatasetIOError("Plots need the dataset; the run config has no data.path")
        signals = {record.signal_id: record.signal for record in load_dataset(config.data.path)}
        missing = [item.signal_id for item in wrong if item.signal_id not in signals]
        if missing:
            raise DatasetIOError(f"Signals missing from {config.data.path}: {', '.join(missing[:5])}")
        written = len(plot_misclassified(wrong, signals, target / "plots"))
    click.echo(render(cm, result, "text"), nl=False)
    click.echo(f"{len(wrong)} misclassified, {written} plots written to {target}")


if __name__ == "__main__":
    main()
