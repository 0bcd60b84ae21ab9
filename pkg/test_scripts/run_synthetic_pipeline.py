import logging
import sys
import tempfile
from pathlib import Path

from app.config import load_run_config
from app.dataset_io import load_dataset, save_dataset
from app.errors import EgmTriageError
from app.metrics import evaluate, render
from app.nn import fit, predict
from app.rule_search import RuleGrid, grid_search
from app.rules import classify
from app.signals import Split
from app.synthgen import class_counts, gen_dataset

# A short run end to end: generate, tune the rule, train a small network, score both on test.
QUICK_OVERRIDES = [
    "data.signals_per_patient=20",
    "network.base_filters=8",
    "network.lstm_units=16",
    "network.lstm_layers=1",
    "network.hidden_dense=32",
    "train.epochs=5",
]
QUICK_GRID = RuleGrid(
    window_fracs=[0.3, 0.35, 0.4, 0.45],
    padding_samples=[30, 45],
    unclassified_thresholds=[0.15, 0.2],
    abnormal_thresholds=[0.1, 0.15],
)


def print_section(title):
    print(f"\n=== {title} ===")


def main():
    """Run the synthetic pipeline in a temporary directory and print what each step produced."""
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        # seed comes from EGM_TRIAGE_SEED in .env when set
        config = load_run_config(overrides=QUICK_OVERRIDES)
    except EgmTriageError as e:
        print(f"\nError: {e}")
        return 1

    with tempfile.TemporaryDirectory() as workdir:
        print_section(f"Generating cohort (seed {config.data.seed})")
        counts = save_dataset(gen_dataset(config.data.generator_config(), workers=4), workdir)
        dataset = load_dataset(workdir)
        print(f"Signals per split: {counts}")
        print(f"Classes: {class_counts(dataset.records)}")
        test = dataset.records_in(Split.TEST)

        print_section("Tuning the rule on train+val")
        result = grid_search(dataset, QUICK_GRID, base=config.rule, threads=4)
        print(f"Best accuracy {result.best_accuracy:.4f} with {result.best.model_dump()}")
        cm, report = evaluate(test, [classify(r.signal, result.best) for r in test])
        print(render(cm, report, "text"), end="")

        print_section("Training the CNN-LSTM")
        fitted = fit(
            dataset.subset(Split.TRAIN),
            dataset.subset(Split.VALIDATION),
            config.network,
            config.train_config(),
            log_path=Path(workdir) / "training_log.csv",
        )
        for entry in fitted.history:
            marker = " *" if entry.is_best else ""
            print(
                f"epoch {entry.epoch}: loss {entry.train_loss:.4f} train {entry.train_acc:.4f} "
                f"val {entry.val_acc:.4f}{marker}"
            )
        predictions = predict(fitted.checkpoint, [r.signal for r in test], config.train.crop_window_ms)
        cm, report = evaluate(test, predictions)
        print(render(cm, report, "text"), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
